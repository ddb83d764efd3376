#include "nhflow/nconnection.hpp"

#include <cmath>

#include "nhflow/dense.hpp"
#include "nhflow/errors.hpp"

namespace nhflow {

void require_same_chart(const ChartSpec& a, const ChartSpec& b, const char* what) {
  if (!a.same_grid(b)) throw InvalidInput(std::string(what) + ": chart mismatch");
}

DMetricField DMetricField::identity(const ChartSpec& chart) {
  DMetricField d{GridField(chart, {Slot::H, Slot::H}), GridField(chart, {Slot::V, Slot::V}),
                 std::vector<int>(chart.dim(), 1)};
  for (std::size_t node = 0; node < d.h.nodes(); ++node) {
    for (int i = 0; i < chart.n; ++i) d.h(node, i * chart.n + i) = 1.0;
    for (int a = 0; a < chart.m; ++a) d.v(node, a * chart.m + a) = 1.0;
  }
  return d;
}

void DMetricField::validate() const {
  require_same_chart(h.chart(), v.chart(), "d-metric");
  const ChartSpec& c = chart();
  if (h.components() != static_cast<std::size_t>(c.n * c.n) || v.components() != static_cast<std::size_t>(c.m * c.m))
    throw InvalidInput("d-metric: block shapes do not match the chart");
  if (signature.size() != static_cast<std::size_t>(c.dim()))
    throw InvalidInput("d-metric: signature needs one flag per axis");
  for (int s : signature)
    if (s != 1 && s != -1) throw InvalidInput("d-metric: signature flags must be +-1");
  h.check_finite("d-metric h-block");
  v.check_finite("d-metric v-block");
  for (std::size_t node = 0; node < h.nodes(); ++node) {
    for (auto [blk, k] : {std::pair{&h, c.n}, std::pair{&v, c.m}}) {
      const double* p = blk->node_ptr(node);
      for (int r = 0; r < k; ++r)
        for (int s = r + 1; s < k; ++s)
          if (p[r * k + s] != p[s * k + r])
            throw InvalidInput("d-metric: asymmetric block at " + describe_node(c, node));
      if (!(std::abs(dense::determinant(dense::load(p, k))) > dense::kSingularThreshold))
        throw SingularMetric("d-metric: singular block at " + describe_node(c, node));
    }
  }
}

bool DMetricField::riemannian() const {
  for (int s : signature)
    if (s != 1) return false;
  return true;
}

FullMetricField assemble_full_metric(const DMetricField& d, const NConnectionField& nc) {
  require_same_chart(d.chart(), nc.chart(), "assemble_full_metric");
  const ChartSpec& c = d.chart();
  const int n = c.n, m = c.m, D = c.dim();
  FullMetricField out{GridField(c, {Slot::A, Slot::A})};
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const double* gh = d.h.node_ptr(node);
    const double* gv = d.v.node_ptr(node);
    const double* N = nc.N.node_ptr(node);
    double* g = out.g.node_ptr(node);
    // mixed block: N_i^e g_ea
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < m; ++a) {
        double s = 0.0;
        for (int e = 0; e < m; ++e) s += N[i * m + e] * gv[e * m + a];
        g[i * D + n + a] = s;
        g[(n + a) * D + i] = s;
      }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = gh[i * n + j];
        for (int a = 0; a < m; ++a) s += N[i * m + a] * g[j * D + n + a];
        g[i * D + j] = s;
      }
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) g[(n + a) * D + n + b] = gv[a * m + b];
  }
  // N N g is symmetric in exact arithmetic; mirror to make it bitwise so.
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    double* g = out.g.node_ptr(node);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) g[j * D + i] = g[i * D + j];
  }
  return out;
}

std::pair<DMetricField, NConnectionField> split_full_metric(const FullMetricField& full,
                                                            std::vector<int> signature) {
  const ChartSpec& c = full.chart();
  const int n = c.n, m = c.m, D = c.dim();
  if (signature.empty()) signature.assign(D, 1);
  DMetricField d{GridField(c, {Slot::H, Slot::H}), GridField(c, {Slot::V, Slot::V}), std::move(signature)};
  NConnectionField nc = NConnectionField::zero(c);
  dense::Mat gv(m, m), gvi(m, m);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const double* g = full.g.node_ptr(node);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) gv(a, b) = g[(n + a) * D + n + b];
    if (!dense::try_inverse(gv, gvi))
      throw SingularMetric("split_full_metric: singular v-block at " + describe_node(c, node));
    double* N = nc.N.node_ptr(node);
    for (int j = 0; j < n; ++j)
      for (int e = 0; e < m; ++e) {
        double s = 0.0;
        for (int a = 0; a < m; ++a) s += gvi(a, e) * g[j * D + n + a];
        N[j * m + e] = s;
      }
    double* gh = d.h.node_ptr(node);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        double s = g[i * D + j];
        for (int a = 0; a < m; ++a)
          for (int b = 0; b < m; ++b) s -= N[i * m + a] * N[j * m + b] * gv(a, b);
        gh[i * n + j] = s;
        gh[j * n + i] = s;
      }
    double* pv = d.v.node_ptr(node);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) pv[a * m + b] = g[(n + a) * D + n + b];
  }
  return {std::move(d), std::move(nc)};
}

FrameMatrices frame_matrices(const NConnectionField& nc) {
  const ChartSpec& c = nc.chart();
  const int n = c.n, m = c.m, D = c.dim();
  FrameMatrices f{GridField(c, {Slot::A, Slot::A}), GridField(c, {Slot::A, Slot::A})};
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    double* fw = f.forward.node_ptr(node);
    double* inv = f.inverse.node_ptr(node);
    for (int a = 0; a < D; ++a) fw[a * D + a] = inv[a * D + a] = 1.0;
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < m; ++a) {
        fw[i * D + n + a] = nc(node, i, a);
        inv[i * D + n + a] = -nc(node, i, a);
      }
  }
  return f;
}

FrameMatrices vielbein_frames(const DMetricField& d, const NConnectionField& nc) {
  require_same_chart(d.chart(), nc.chart(), "vielbein_frames");
  const ChartSpec& c = d.chart();
  const int n = c.n, m = c.m, D = c.dim();
  FrameMatrices f{GridField(c, {Slot::A, Slot::A}), GridField(c, {Slot::A, Slot::A})};
  dense::Mat inv(D, D), fw(D, D);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    inv.setZero();
    for (auto [blk, k, off] : {std::tuple{&d.h, n, 0}, std::tuple{&d.v, m, n}}) {
      Eigen::SelfAdjointEigenSolver<dense::Mat> es(dense::load(blk->node_ptr(node), k));
      const auto& lam = es.eigenvalues();
      const auto& Q = es.eigenvectors();
      if (lam.minCoeff() <= 0.0)
        throw InvalidInput("vielbein_frames: blocks must be positive definite at " + describe_node(c, node));
      // B = sqrt(Lambda) Q^T, so B^T B is the block.
      for (int r = 0; r < k; ++r)
        for (int s = 0; s < k; ++s) inv(off + r, off + s) = std::sqrt(lam(r)) * Q(s, r);
    }
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < m; ++a) inv(i, n + a) = -nc(node, i, a);
    if (!dense::try_inverse(inv, fw)) throw SingularMetric("vielbein_frames: singular frame at " + describe_node(c, node));
    dense::store(inv, f.inverse.node_ptr(node));
    dense::store(fw, f.forward.node_ptr(node));
  }
  return f;
}

DMetricField metric_from_frames(const FrameMatrices& frames, const std::vector<int>& signature) {
  const ChartSpec& c = frames.inverse.chart();
  const int n = c.n, m = c.m, D = c.dim();
  DMetricField d{GridField(c, {Slot::H, Slot::H}), GridField(c, {Slot::V, Slot::V}), signature};
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const double* B = frames.inverse.node_ptr(node);
    for (auto [blk, k, off] : {std::tuple{&d.h, n, 0}, std::tuple{&d.v, m, n}}) {
      double* g = blk->node_ptr(node);
      for (int r = 0; r < k; ++r)
        for (int s = 0; s < k; ++s) {
          double acc = 0.0;
          for (int q = 0; q < k; ++q) acc += B[(off + q) * D + off + r] * signature[off + q] * B[(off + q) * D + off + s];
          g[r * k + s] = acc;
        }
    }
  }
  return d;
}

GridField e_derivative(const GridField& f, int i, const NConnectionField& nc, const StencilConfig& cfg) {
  require_same_chart(f.chart(), nc.chart(), "e_derivative");
  const ChartSpec& c = f.chart();
  if (i < 0 || i >= c.n) throw InvalidInput("e_derivative: index must be horizontal");
  GridField out = partial_derivative(f, i, cfg);
  std::vector<double> w(c.nodes());
  for (int a = 0; a < c.m; ++a) {
    bool any = false;
    for (std::size_t node = 0; node < c.nodes(); ++node) {
      w[node] = nc(node, i, a);
      any = any || w[node] != 0.0;
    }
    if (any) accumulate_derivative(f, 0, f.components(), c.n + a, cfg, w.data(), -1.0, out, 0);
  }
  return out;
}

GridField adapted_derivative(const GridField& f, int alpha, const NConnectionField& nc, const StencilConfig& cfg) {
  if (alpha < f.chart().n) return e_derivative(f, alpha, nc, cfg);
  return partial_derivative(f, alpha, cfg);
}

GridField volume_density(const DMetricField& d) {
  const ChartSpec& c = d.chart();
  GridField out = GridField::scalar(c);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const double dh = dense::determinant(dense::load(d.h.node_ptr(node), c.n));
    const double dv = dense::determinant(dense::load(d.v.node_ptr(node), c.m));
    out(node) = std::sqrt(std::abs(dh * dv));
  }
  return out;
}

double total_volume(const DMetricField& d) { return integrate(volume_density(d)); }

}  // namespace nhflow
