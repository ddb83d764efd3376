#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nhflow {

// Index-slot tags: horizontal (n values), vertical (m values), or all n+m axes.
enum class Slot : char { H = 'h', V = 'v', A = 'a' };

// Periodic chart. Axes 0..n-1 are horizontal (x^i), n..n+m-1 vertical (y^a).
// Node k on an axis sits at origin + k * extent / resolution.
struct ChartSpec {
  int n = 2;
  int m = 1;
  std::vector<double> extents;
  std::vector<int> resolution;
  std::vector<double> origin;  // empty means all zeros

  int dim() const { return n + m; }
  void validate() const;
  std::size_t nodes() const;
  std::size_t stride(int axis) const;
  double spacing(int axis) const { return extents[axis] / resolution[axis]; }
  double coordinate(int axis, int k) const;
  double cell_volume() const;
  bool same_grid(const ChartSpec& other) const;
};

ChartSpec make_chart(int n, int m, std::vector<double> extents, std::vector<int> resolution,
                     std::vector<double> origin = {});

struct StencilConfig {
  int order = 2;
  void validate() const;
  int reach() const { return order / 2; }
};

class GridField {
 public:
  GridField() = default;
  GridField(const ChartSpec& chart, std::vector<Slot> shape);

  static GridField scalar(const ChartSpec& chart) { return GridField(chart, {}); }

  const ChartSpec& chart() const { return chart_; }
  const std::vector<Slot>& shape() const { return shape_; }
  std::size_t components() const { return ncomp_; }
  std::size_t nodes() const { return nodes_; }

  double& operator()(std::size_t node, std::size_t comp = 0) { return data_[node * ncomp_ + comp]; }
  double operator()(std::size_t node, std::size_t comp = 0) const { return data_[node * ncomp_ + comp]; }
  double* node_ptr(std::size_t node) { return data_.data() + node * ncomp_; }
  const double* node_ptr(std::size_t node) const { return data_.data() + node * ncomp_; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  // Throws InvalidInput naming the first non-finite node.
  void check_finite(const std::string& what) const;

 private:
  ChartSpec chart_;
  std::vector<Slot> shape_;
  std::size_t ncomp_ = 1;
  std::size_t nodes_ = 0;
  std::vector<double> data_;
};

std::size_t slot_extent(const ChartSpec& chart, Slot s);

using Sampler = std::function<double(std::span<const double> u)>;
using MultiSampler = std::function<void(std::span<const double> u, std::span<double> out)>;

void node_coordinates(const ChartSpec& chart, std::size_t node, std::span<double> u);
void node_multi_index(const ChartSpec& chart, std::size_t node, std::span<int> idx);
std::string describe_node(const ChartSpec& chart, std::size_t node);

GridField make_grid(const ChartSpec& chart, const Sampler& sampler);
GridField make_grid(const ChartSpec& chart, std::vector<Slot> shape, const MultiSampler& sampler);

GridField partial_derivative(const GridField& f, int axis, const StencilConfig& cfg);

// Pure second derivatives use the compact three/five point stencil; mixed
// ones are composed central first differences.
GridField second_derivative(const GridField& f, int axis_a, int axis_b, const StencilConfig& cfg);

// out[node, out_begin + c] += scale * w(node) * d_axis f[node, begin + c], c < count.
// weight may be null (w = 1).
void accumulate_derivative(const GridField& f, std::size_t begin, std::size_t count, int axis,
                           const StencilConfig& cfg, const double* weight, double scale, GridField& out,
                           std::size_t out_begin);

double integrate(const GridField& f, const GridField& weight);
double integrate(const GridField& f);

// Nodes at least margin[axis] away from either end of each axis; windowed
// (non-periodic) samples are only trusted there.
bool is_interior(const ChartSpec& chart, std::size_t node, std::span<const int> margin);
double max_abs(const GridField& f);
double max_abs_interior(const GridField& f, std::span<const int> margin);
double max_abs_diff(const GridField& a, const GridField& b);

}  // namespace nhflow
