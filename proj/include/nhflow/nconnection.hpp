#pragma once

#include <utility>
#include <vector>

#include "nhflow/grid.hpp"

namespace nhflow {

// N_i^a stored with component index i*m + a.
struct NConnectionField {
  GridField N;

  static NConnectionField zero(const ChartSpec& chart) { return {GridField(chart, {Slot::H, Slot::V})}; }
  const ChartSpec& chart() const { return N.chart(); }
  double operator()(std::size_t node, int i, int a) const { return N(node, i * chart().m + a); }
};

// Blocks g_ij (n x n) and g_ab (m x m), row-major per node.
struct DMetricField {
  GridField h;
  GridField v;
  std::vector<int> signature;  // one +-1 per axis

  static DMetricField identity(const ChartSpec& chart);
  const ChartSpec& chart() const { return h.chart(); }
  // Symmetry, signature length and the |det| > 1e-12 invertibility check.
  void validate() const;
  bool riemannian() const;
};

struct FullMetricField {
  GridField g;  // (n+m) x (n+m) row-major per node
  const ChartSpec& chart() const { return g.chart(); }
};

// forward holds e_alpha^{alpha'} and inverse e^alpha_{alpha'}, both (n+m)^2
// row-major with the adapted index first.
struct FrameMatrices {
  GridField forward;
  GridField inverse;
};

FullMetricField assemble_full_metric(const DMetricField& d, const NConnectionField& nc);
std::pair<DMetricField, NConnectionField> split_full_metric(const FullMetricField& g,
                                                            std::vector<int> signature = {});
FrameMatrices frame_matrices(const NConnectionField& nc);

// Frames whose diagonal coframe blocks B satisfy B^T eta B = g block; used by
// the frame evolution equation.
FrameMatrices vielbein_frames(const DMetricField& d, const NConnectionField& nc);
// Blocks rebuilt from the diagonal coframe blocks of frames.inverse.
DMetricField metric_from_frames(const FrameMatrices& frames, const std::vector<int>& signature);

// e_i f = d_i f - N_i^a d_a f.
GridField e_derivative(const GridField& f, int i, const NConnectionField& nc, const StencilConfig& cfg);
// e_alpha for any alpha: horizontal axes use e_derivative, vertical ones d_a.
GridField adapted_derivative(const GridField& f, int alpha, const NConnectionField& nc,
                             const StencilConfig& cfg);

// sqrt|det g_ij * det g_ab| per node.
GridField volume_density(const DMetricField& d);
double total_volume(const DMetricField& d);

void require_same_chart(const ChartSpec& a, const ChartSpec& b, const char* what);

}  // namespace nhflow
