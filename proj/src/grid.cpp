#include "nhflow/grid.hpp"

#include <cmath>
#include <sstream>

#include "nhflow/errors.hpp"

namespace nhflow {

void ChartSpec::validate() const {
  if (n < 2) throw InvalidInput("chart: n must be >= 2");
  if (m < 1) throw InvalidInput("chart: m must be >= 1");
  const auto d = static_cast<std::size_t>(dim());
  if (extents.size() != d || resolution.size() != d)
    throw InvalidInput("chart: extents/resolution must have n+m entries");
  if (!origin.empty() && origin.size() != d) throw InvalidInput("chart: origin must have n+m entries");
  for (std::size_t a = 0; a < d; ++a) {
    if (!(extents[a] > 0.0) || !std::isfinite(extents[a]))
      throw InvalidInput("chart: extent of axis " + std::to_string(a) + " must be positive");
    if (resolution[a] < 8)
      throw InvalidInput("chart: resolution of axis " + std::to_string(a) + " must be >= 8");
  }
}

std::size_t ChartSpec::nodes() const {
  std::size_t total = 1;
  for (int r : resolution) total *= static_cast<std::size_t>(r);
  return total;
}

std::size_t ChartSpec::stride(int axis) const {
  std::size_t s = 1;
  for (int b = dim() - 1; b > axis; --b) s *= static_cast<std::size_t>(resolution[b]);
  return s;
}

double ChartSpec::coordinate(int axis, int k) const {
  const double o = origin.empty() ? 0.0 : origin[axis];
  return o + k * spacing(axis);
}

double ChartSpec::cell_volume() const {
  double v = 1.0;
  for (int a = 0; a < dim(); ++a) v *= spacing(a);
  return v;
}

bool ChartSpec::same_grid(const ChartSpec& other) const {
  if (n != other.n || m != other.m || resolution != other.resolution) return false;
  for (int a = 0; a < dim(); ++a) {
    if (extents[a] != other.extents[a]) return false;
    const double o1 = origin.empty() ? 0.0 : origin[a];
    const double o2 = other.origin.empty() ? 0.0 : other.origin[a];
    if (o1 != o2) return false;
  }
  return true;
}

ChartSpec make_chart(int n, int m, std::vector<double> extents, std::vector<int> resolution,
                     std::vector<double> origin) {
  ChartSpec c{n, m, std::move(extents), std::move(resolution), std::move(origin)};
  c.validate();
  return c;
}

void StencilConfig::validate() const {
  if (order != 2 && order != 4) throw InvalidInput("stencil order must be 2 or 4");
}

std::size_t slot_extent(const ChartSpec& chart, Slot s) {
  switch (s) {
    case Slot::H: return static_cast<std::size_t>(chart.n);
    case Slot::V: return static_cast<std::size_t>(chart.m);
    case Slot::A: return static_cast<std::size_t>(chart.dim());
  }
  return 0;
}

GridField::GridField(const ChartSpec& chart, std::vector<Slot> shape)
    : chart_(chart), shape_(std::move(shape)) {
  chart_.validate();
  ncomp_ = 1;
  for (Slot s : shape_) ncomp_ *= slot_extent(chart_, s);
  nodes_ = chart_.nodes();
  data_.assign(nodes_ * ncomp_, 0.0);
}

void GridField::check_finite(const std::string& what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i]))
      throw InvalidInput(what + ": non-finite value at " + describe_node(chart_, i / ncomp_) +
                         " component " + std::to_string(i % ncomp_));
  }
}

void node_multi_index(const ChartSpec& chart, std::size_t node, std::span<int> idx) {
  for (int a = chart.dim() - 1; a >= 0; --a) {
    const auto r = static_cast<std::size_t>(chart.resolution[a]);
    idx[a] = static_cast<int>(node % r);
    node /= r;
  }
}

void node_coordinates(const ChartSpec& chart, std::size_t node, std::span<double> u) {
  for (int a = chart.dim() - 1; a >= 0; --a) {
    const auto r = static_cast<std::size_t>(chart.resolution[a]);
    u[a] = chart.coordinate(a, static_cast<int>(node % r));
    node /= r;
  }
}

std::string describe_node(const ChartSpec& chart, std::size_t node) {
  std::vector<int> idx(chart.dim());
  std::vector<double> u(chart.dim());
  node_multi_index(chart, node, idx);
  node_coordinates(chart, node, u);
  std::ostringstream os;
  os << "node " << node << " (index";
  for (int k : idx) os << ' ' << k;
  os << "; u =";
  for (double x : u) os << ' ' << x;
  os << ')';
  return os.str();
}

GridField make_grid(const ChartSpec& chart, const Sampler& sampler) {
  GridField f = GridField::scalar(chart);
  std::vector<double> u(chart.dim());
  for (std::size_t node = 0; node < f.nodes(); ++node) {
    node_coordinates(chart, node, u);
    const double v = sampler(u);
    if (!std::isfinite(v)) throw InvalidInput("make_grid: non-finite sample at " + describe_node(chart, node));
    f(node) = v;
  }
  return f;
}

GridField make_grid(const ChartSpec& chart, std::vector<Slot> shape, const MultiSampler& sampler) {
  GridField f(chart, std::move(shape));
  std::vector<double> u(chart.dim());
  for (std::size_t node = 0; node < f.nodes(); ++node) {
    node_coordinates(chart, node, u);
    std::span<double> out(f.node_ptr(node), f.components());
    sampler(u, out);
    for (std::size_t c = 0; c < out.size(); ++c)
      if (!std::isfinite(out[c]))
        throw InvalidInput("make_grid: non-finite sample at " + describe_node(chart, node) + " component " +
                           std::to_string(c));
  }
  return f;
}

namespace {

void check_axis(const ChartSpec& chart, int axis) {
  if (axis < 0 || axis >= chart.dim()) throw InvalidInput("axis " + std::to_string(axis) + " out of range");
}

}  // namespace

void accumulate_derivative(const GridField& f, std::size_t begin, std::size_t count, int axis,
                           const StencilConfig& cfg, const double* weight, double scale, GridField& out,
                           std::size_t out_begin) {
  const ChartSpec& ch = f.chart();
  check_axis(ch, axis);
  cfg.validate();
  const std::size_t stride = ch.stride(axis);
  const int R = ch.resolution[axis];
  const std::size_t block = stride * static_cast<std::size_t>(R);
  const std::size_t nblocks = ch.nodes() / block;
  const double h = ch.spacing(axis);
  const std::size_t fc = f.components();
  const std::size_t oc = out.components();
  const double* src = f.values().data();
  double* dst = out.values().data();

  for (std::size_t b = 0; b < nblocks; ++b) {
    for (int k = 0; k < R; ++k) {
      const std::size_t kp1 = static_cast<std::size_t>((k + 1) % R);
      const std::size_t km1 = static_cast<std::size_t>((k + R - 1) % R);
      const std::size_t kp2 = static_cast<std::size_t>((k + 2) % R);
      const std::size_t km2 = static_cast<std::size_t>((k + R - 2) % R);
      for (std::size_t j = 0; j < stride; ++j) {
        const std::size_t base = b * block + j;
        const std::size_t node = base + static_cast<std::size_t>(k) * stride;
        const double w = scale * (weight ? weight[node] : 1.0);
        if (w == 0.0) continue;
        const double* p1 = src + (base + kp1 * stride) * fc + begin;
        const double* m1 = src + (base + km1 * stride) * fc + begin;
        double* o = dst + node * oc + out_begin;
        if (cfg.order == 2) {
          const double c = w / (2.0 * h);
          for (std::size_t q = 0; q < count; ++q) o[q] += c * (p1[q] - m1[q]);
        } else {
          const double* p2 = src + (base + kp2 * stride) * fc + begin;
          const double* m2 = src + (base + km2 * stride) * fc + begin;
          const double c = w / (12.0 * h);
          for (std::size_t q = 0; q < count; ++q) o[q] += c * (8.0 * (p1[q] - m1[q]) - (p2[q] - m2[q]));
        }
      }
    }
  }
}

GridField partial_derivative(const GridField& f, int axis, const StencilConfig& cfg) {
  GridField out(f.chart(), f.shape());
  accumulate_derivative(f, 0, f.components(), axis, cfg, nullptr, 1.0, out, 0);
  return out;
}

GridField second_derivative(const GridField& f, int axis_a, int axis_b, const StencilConfig& cfg) {
  const ChartSpec& ch = f.chart();
  check_axis(ch, axis_a);
  check_axis(ch, axis_b);
  cfg.validate();
  if (axis_a != axis_b) return partial_derivative(partial_derivative(f, axis_a, cfg), axis_b, cfg);

  GridField out(ch, f.shape());
  const int axis = axis_a;
  const std::size_t stride = ch.stride(axis);
  const int R = ch.resolution[axis];
  const std::size_t block = stride * static_cast<std::size_t>(R);
  const std::size_t nblocks = ch.nodes() / block;
  const double h = ch.spacing(axis);
  const std::size_t fc = f.components();
  const double* src = f.values().data();
  double* dst = out.values().data();
  for (std::size_t b = 0; b < nblocks; ++b) {
    for (int k = 0; k < R; ++k) {
      const std::size_t kp1 = static_cast<std::size_t>((k + 1) % R);
      const std::size_t km1 = static_cast<std::size_t>((k + R - 1) % R);
      const std::size_t kp2 = static_cast<std::size_t>((k + 2) % R);
      const std::size_t km2 = static_cast<std::size_t>((k + R - 2) % R);
      for (std::size_t j = 0; j < stride; ++j) {
        const std::size_t base = b * block + j;
        const std::size_t node = base + static_cast<std::size_t>(k) * stride;
        const double* c0 = src + node * fc;
        const double* p1 = src + (base + kp1 * stride) * fc;
        const double* m1 = src + (base + km1 * stride) * fc;
        double* o = dst + node * fc;
        if (cfg.order == 2) {
          const double c = 1.0 / (h * h);
          for (std::size_t q = 0; q < fc; ++q) o[q] = c * (p1[q] - 2.0 * c0[q] + m1[q]);
        } else {
          const double* p2 = src + (base + kp2 * stride) * fc;
          const double* m2 = src + (base + km2 * stride) * fc;
          const double c = 1.0 / (12.0 * h * h);
          for (std::size_t q = 0; q < fc; ++q)
            o[q] = c * (16.0 * (p1[q] + m1[q]) - 30.0 * c0[q] - (p2[q] + m2[q]));
        }
      }
    }
  }
  return out;
}

double integrate(const GridField& f, const GridField& weight) {
  if (!f.chart().same_grid(weight.chart())) throw InvalidInput("integrate: chart mismatch");
  if (f.components() != 1 || weight.components() != 1) throw InvalidInput("integrate: scalar fields only");
  double sum = 0.0;
  for (std::size_t node = 0; node < f.nodes(); ++node) {
    const double w = weight(node);
    if (w < 0.0) throw InvalidInput("integrate: negative weight at " + describe_node(f.chart(), node));
    sum += f(node) * w;
  }
  return sum * f.chart().cell_volume();
}

double integrate(const GridField& f) {
  if (f.components() != 1) throw InvalidInput("integrate: scalar fields only");
  double sum = 0.0;
  for (std::size_t node = 0; node < f.nodes(); ++node) sum += f(node);
  return sum * f.chart().cell_volume();
}

bool is_interior(const ChartSpec& chart, std::size_t node, std::span<const int> margin) {
  for (int a = chart.dim() - 1; a >= 0; --a) {
    const int r = chart.resolution[a];
    const int k = static_cast<int>(node % static_cast<std::size_t>(r));
    node /= static_cast<std::size_t>(r);
    const int w = margin.empty() ? 0 : margin[a];
    if (k < w || k >= r - w) return false;
  }
  return true;
}

double max_abs(const GridField& f) {
  double mx = 0.0;
  for (double v : f.values()) mx = std::max(mx, std::abs(v));
  return mx;
}

double max_abs_interior(const GridField& f, std::span<const int> margin) {
  double mx = 0.0;
  for (std::size_t node = 0; node < f.nodes(); ++node) {
    if (!is_interior(f.chart(), node, margin)) continue;
    const double* p = f.node_ptr(node);
    for (std::size_t c = 0; c < f.components(); ++c) mx = std::max(mx, std::abs(p[c]));
  }
  return mx;
}

double max_abs_diff(const GridField& a, const GridField& b) {
  if (a.values().size() != b.values().size()) throw InvalidInput("max_abs_diff: shape mismatch");
  double mx = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) mx = std::max(mx, std::abs(a.values()[i] - b.values()[i]));
  return mx;
}

}  // namespace nhflow
