#include "nhflow/catalog.hpp"

#include <cmath>
#include <limits>

#include "nhflow/dense.hpp"
#include "nhflow/errors.hpp"

namespace nhflow {

namespace {

std::vector<int> uniform_margin(const ChartSpec& c, int width) { return std::vector<int>(c.dim(), width); }

double max_interior(const GridField& f, const std::vector<int>& margin) { return max_abs_interior(f, margin); }

GridField combine(const GridField& a, const GridField& b, double sb) {
  GridField out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t q = 0; q < o.size(); ++q) o[q] += sb * bv[q];
  return out;
}

}  // namespace

double central_difference(const Fn1& f, double x, double step) {
  return (8.0 * (f(x + step) - f(x - step)) - (f(x + 2.0 * step) - f(x - 2.0 * step))) / (12.0 * step);
}

// ---- pp-waves -------------------------------------------------------------

double pp_wave_kappa_value(const PPWaveSpec& spec, double x, double y, double p) {
  switch (spec.kind) {
    case PPWaveSpec::Kind::Monochromatic: return (x * x - y * y) * std::sin(p);
    case PPWaveSpec::Kind::Packet: {
      if (std::abs(p) >= spec.p0) return 0.0;
      const double r2 = x * x + y * y;
      return x * y / (r2 * r2 * std::exp(spec.p0 * spec.p0 - p * p));
    }
    case PPWaveSpec::Kind::Custom:
      if (!spec.kappa) throw InvalidInput("pp-wave: custom kind needs a kappa function");
      return spec.kappa(x, y, p);
  }
  return 0.0;
}

PPWaveKappa pp_wave_kappa(const PPWaveSpec& spec, const ChartSpec& chart, const StencilConfig& cfg) {
  chart.validate();
  const int off = chart.n == 3 ? 1 : 0;
  if (chart.n - off != 2 || chart.m < 1) throw InvalidInput("pp-wave: chart must carry (x, y | p, ...)");
  if (spec.kind == PPWaveSpec::Kind::Packet) {
    auto covers_zero = [&](int axis) {
      const double lo = chart.coordinate(axis, 0);
      return lo <= 0.0 && lo + chart.extents[axis] > 0.0;
    };
    if (covers_zero(off) && covers_zero(off + 1))
      throw InvalidInput("pp-wave: packet profile is singular at x = y = 0 inside the chart");
  }
  PPWaveKappa out;
  out.kappa = make_grid(chart, [&](std::span<const double> u) {
    return pp_wave_kappa_value(spec, u[off], u[off + 1], u[off + 2]);
  });
  GridField lap = combine(second_derivative(out.kappa, off, off, cfg),
                          second_derivative(out.kappa, off + 1, off + 1, cfg), 1.0);
  out.harmonicity = max_interior(lap, uniform_margin(chart, cfg.reach()));
  return out;
}

FullMetricField build_pp_wave_5d(const PPWaveSpec& spec, const ChartSpec& chart) {
  chart.validate();
  const int off = chart.n == 3 ? 1 : 0;
  if (chart.n - off != 2 || chart.m != 2) throw InvalidInput("pp-wave: chart must be 3+2 or 2+2");
  const int D = chart.dim();
  FullMetricField g{GridField(chart, {Slot::A, Slot::A})};
  std::vector<double> u(static_cast<std::size_t>(D));
  int sign = 0;
  for (std::size_t node = 0; node < chart.nodes(); ++node) {
    node_coordinates(chart, node, u);
    const double k = pp_wave_kappa_value(spec, u[off], u[off + 1], u[off + 2]);
    const int s = k > 0.0 ? 1 : (k < 0.0 ? -1 : 0);
    if (s == 0 || (sign != 0 && s != sign))
      throw InvalidInput("pp-wave: kappa vanishes or changes sign at " + describe_node(chart, node));
    sign = s;
    double* p = g.g.node_ptr(node);
    if (off) p[0] = spec.eps1;
    p[off * D + off] = -1.0;
    p[(off + 1) * D + off + 1] = -1.0;
    p[(off + 2) * D + off + 2] = -2.0 * k;
    p[(off + 3) * D + off + 3] = 1.0 / (8.0 * k);
  }
  return g;
}

double metric_ricci_residual(const FullMetricField& g, const StencilConfig& cfg, std::span<const int> margin) {
  GridField gamma = levi_civita(g, cfg).gamma;
  GridField R = ricci_from_connection(gamma, NConnectionField::zero(g.chart()), cfg);
  return max_abs_interior(R, margin);
}

// ---- solitons ---------------------------------------------------------------

double sine_gordon_kink(double p, int sign) { return 4.0 * std::atan(std::exp(sign * p)); }

double sine_gordon_kink_derivative(double p, int sign) { return 2.0 * sign / std::cosh(p); }

double sine_gordon_kink_second_derivative(double p, int sign) { return -2.0 * sign * std::tanh(p) / std::cosh(p); }

double sine_gordon_residual(double p, int sign) {
  return std::abs(sine_gordon_kink_second_derivative(p, sign) - std::sin(sine_gordon_kink(p, sign)));
}

double solitonic_residual_3d(const GridField& eta, int eps, const StencilConfig& cfg, std::span<const int> margin) {
  const ChartSpec& c = eta.chart();
  if (c.dim() != 3) throw InvalidInput("solitonic_residual_3d: chart must have axes (x, y, p)");
  if (eps != 1 && eps != -1) throw InvalidInput("solitonic_residual_3d: eps must be +-1");
  GridField ep = partial_derivative(eta, 2, cfg);
  GridField eppp = partial_derivative(second_derivative(eta, 2, 2, cfg), 2, cfg);
  GridField inner = combine(partial_derivative(eta, 0, cfg), eppp, 1.0);
  for (std::size_t node = 0; node < c.nodes(); ++node) inner(node) += 6.0 * eta(node) * ep(node);
  GridField res = combine(second_derivative(eta, 1, 1, cfg), partial_derivative(inner, 2, cfg), eps);
  if (margin.empty()) return max_interior(res, uniform_margin(c, 4 * cfg.reach()));
  return max_abs_interior(res, margin);
}

// ---- Einstein-type ansatz ---------------------------------------------------

EinsteinAnsatz build_einstein_ansatz(const EinsteinAnsatzSpec& spec, const ChartSpec& chart,
                                     const StencilConfig& cfg, std::span<const int> margin_in) {
  chart.validate();
  if (chart.n != 2 || chart.m != 2) throw InvalidInput("einstein ansatz: chart must be 2+2 (x2, x3 | v, y5)");
  if (!spec.g2 || !spec.g3 || !spec.f || !spec.h0 || !spec.f0 || !spec.h_lambda || !spec.v_lambda || !spec.sigma0)
    throw InvalidInput("einstein ansatz: missing function");
  for (int s : spec.eps)
    if (s != 1 && s != -1) throw InvalidInput("einstein ansatz: signs must be +-1");
  const double v0 = chart.coordinate(2, 0);
  const double hv = chart.spacing(2);
  const double e4 = spec.eps[0 + 2];
  auto zero2 = [](double, double) { return 0.0; };
  const Fn2 n1[2] = {spec.n1[0] ? spec.n1[0] : Fn2(zero2), spec.n1[1] ? spec.n1[1] : Fn2(zero2)};
  const Fn2 n2[2] = {spec.n2[0] ? spec.n2[0] : Fn2(zero2), spec.n2[1] ? spec.n2[1] : Fn2(zero2)};

  auto source = [&](double x2, double x3, double v) {
    return spec.h_lambda(x2, x3, v) * (spec.f(x2, x3, v) - spec.f0(x2, x3));
  };
  // varsigma_4 at (x2, x3, v0 + upto) from k full midpoint cells plus an optional half cell
  auto sigma4 = [&](double x2, double x3, int cells, bool half) {
    double I = 0.0;
    for (int j = 0; j < cells; ++j) I += hv * source(x2, x3, v0 + (j + 0.5) * hv);
    if (half) I += 0.5 * hv * source(x2, x3, v0 + (cells + 0.25) * hv);
    const double h0 = spec.h0(x2, x3);
    return spec.sigma0(x2, x3) - e4 / 8.0 * h0 * h0 * I;
  };
  auto dvf = [&](double x2, double x3, double v) {
    return central_difference([&](double t) { return spec.f(x2, x3, t); }, v);
  };

  EinsteinAnsatz out;
  out.d = DMetricField{GridField(chart, {Slot::H, Slot::H}), GridField(chart, {Slot::V, Slot::V}),
                       {spec.eps[0], spec.eps[1], spec.eps[2], spec.eps[3]}};
  out.nc = NConnectionField::zero(chart);
  out.sigma4 = GridField::scalar(chart);
  std::vector<double> u(4);
  std::vector<int> idx(4);
  int fsign = 0, ssign = 0;
  for (std::size_t node = 0; node < chart.nodes(); ++node) {
    node_coordinates(chart, node, u);
    node_multi_index(chart, node, idx);
    const double x2 = u[0], x3 = u[1], v = u[2];
    const int k = idx[2];
    const double fv = dvf(x2, x3, v);
    const double s4 = sigma4(x2, x3, k, false);
    const int fs = fv > 0 ? 1 : -1, ss = s4 > 0 ? 1 : -1;
    if (!(std::abs(fv) > 1e-6) || (fsign && fs != fsign))
      throw InvalidInput("einstein ansatz: d_v f vanishes or changes sign at " + describe_node(chart, node));
    if (!(std::abs(s4) > 0.0) || (ssign && ss != ssign))
      throw InvalidInput("einstein ansatz: varsigma_4 vanishes or changes sign at " + describe_node(chart, node));
    fsign = fs;
    ssign = ss;
    const double h0 = spec.h0(x2, x3);
    const double ff = spec.f(x2, x3, v) - spec.f0(x2, x3);

    double* gh = out.d.h.node_ptr(node);
    gh[0] = spec.eps[0] * spec.g2(x2, x3);
    gh[3] = spec.eps[1] * spec.g3(x2, x3);
    double* gv = out.d.v.node_ptr(node);
    gv[0] = spec.eps[2] * h0 * h0 * fv * fv * std::abs(s4);
    gv[3] = spec.eps[3] * ff * ff;
    out.sigma4(node) = s4;

    // w_i = -d_i varsigma_4 / d_v varsigma_4
    const double dvs = -e4 / 8.0 * h0 * h0 * source(x2, x3, v);
    const double ds[2] = {central_difference([&](double t) { return sigma4(t, x3, k, false); }, x2),
                          central_difference([&](double t) { return sigma4(x2, t, k, false); }, x3)};
    // n_k quadrature
    double J = 0.0;
    for (int j = 0; j < k; ++j) {
      const double vm = v0 + (j + 0.5) * hv;
      const double fm = spec.f(x2, x3, vm) - spec.f0(x2, x3);
      const double dm = dvf(x2, x3, vm);
      J += hv * dm * dm * sigma4(x2, x3, j, true) / (fm * fm * fm);
    }
    double* N = out.nc.N.node_ptr(node);
    for (int i = 0; i < 2; ++i) {
      if (dvs != 0.0) N[i * 2 + 0] = -ds[i] / dvs;
      else if (std::abs(ds[i]) > 1e-14)
        throw InvalidInput("einstein ansatz: d_v varsigma_4 vanishes while d_i varsigma_4 does not at " +
                           describe_node(chart, node));
      N[i * 2 + 1] = n1[i](x2, x3) + n2[i](x2, x3) * J;
    }
  }
  out.d.validate();

  RicciData r = curvature_ricci(canonical_dconnection(out.d, out.nc, cfg), out.nc, out.d, cfg);
  const std::vector<int> margin = margin_in.empty() ? uniform_margin(chart, 2 * cfg.reach())
                                                    : std::vector<int>(margin_in.begin(), margin_in.end());
  dense::Mat gi;
  for (std::size_t node = 0; node < chart.nodes(); ++node) {
    if (!is_interior(chart, node, margin)) continue;
    node_coordinates(chart, node, u);
    const double vl = spec.v_lambda(u[0], u[1]);
    const double hl = spec.h_lambda(u[0], u[1], u[2]);
    for (auto [blk, R, lam, acc] : {std::tuple{&out.d.h, &r.Rij, vl, &out.residuals.h},
                                    std::tuple{&out.d.v, &r.Rab, hl, &out.residuals.v}}) {
      if (!dense::try_inverse(dense::load(blk->node_ptr(node), 2), gi))
        throw SingularMetric("einstein ansatz: singular block at " + describe_node(chart, node));
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          double s = 0.0;
          for (int q = 0; q < 2; ++q) s += gi(i, q) * (*R)(node, q * 2 + j);
          *acc = std::max(*acc, std::abs(s - (i == j ? lam : 0.0)));
        }
    }
    for (int q = 0; q < 4; ++q) {
      out.residuals.hv = std::max(out.residuals.hv, std::abs(r.Ria(node, q)));
      out.residuals.vh = std::max(out.residuals.vh, std::abs(r.Rai(node, q)));
    }
  }
  return out;
}

// ---- solitonic 4d metrics ---------------------------------------------------

Solitonic4d build_solitonic_4d(const Solitonic4dSpec& spec, double chi, const ChartSpec& chart,
                               const StencilConfig& cfg, std::span<const int> margin_in) {
  chart.validate();
  if (chart.n != 2 || chart.m != 2) throw InvalidInput("solitonic 4d: chart must be 2+2 (x, y | p, v)");
  if (!spec.psi || !spec.b_breve || !spec.k) throw InvalidInput("solitonic 4d: missing function");
  const double br = spec.b_r ? spec.b_r(chi) : 1.0;
  double rn[2], rate[2];
  for (int a = 0; a < 2; ++a) {
    rn[a] = spec.rn[a] ? spec.rn[a](chi) : 1.0;
    rate[a] = spec.rn_rate[a] ? spec.rn_rate[a](chi) : 0.0;
  }
  auto sn = [&](int a, double x, double y) { return spec.sn[a] ? spec.sn[a](x, y) : 0.0; };

  Solitonic4d out;
  out.d = DMetricField{GridField(chart, {Slot::H, Slot::H}), GridField(chart, {Slot::V, Slot::V}), {-1, -1, -1, 1}};
  out.nc = NConnectionField::zero(chart);
  std::vector<double> u(4);
  for (std::size_t node = 0; node < chart.nodes(); ++node) {
    node_coordinates(chart, node, u);
    const double x = u[0], y = u[1], p = u[2];
    const double q = sine_gordon_kink(p, spec.q_sign);
    const double k = spec.k(p);
    const double qk = q * k;
    const double qks = sine_gordon_kink_derivative(p, spec.q_sign) * k + q * central_difference(spec.k, p);
    if (!(std::abs(qk) > 0.0) || !(std::abs(qks) > 0.0))
      throw InvalidInput("solitonic 4d: qk or its p-derivative vanishes at " + describe_node(chart, node));
    const double b = spec.b_breve(x, y);
    const double e = std::exp(spec.psi(x, y));
    double* gh = out.d.h.node_ptr(node);
    gh[0] = gh[3] = -e;
    double* gv = out.d.v.node_ptr(node);
    gv[0] = -spec.h0 * spec.h0 * b * b * br * br * qks * qks;
    gv[3] = b * b * br * br * qk * qk;
    const double lnqk_s = qks / qk;
    const double dx = central_difference([&](double t) { return std::log(std::abs(spec.b_breve(t, y))); }, x);
    const double dy = central_difference([&](double t) { return std::log(std::abs(spec.b_breve(x, t))); }, y);
    double* N = out.nc.N.node_ptr(node);
    N[0] = dx / lnqk_s;
    N[2] = dy / lnqk_s;
    N[1] = sn(0, x, y) * rn[0];
    N[3] = sn(1, x, y) * rn[1];
    for (int a = 0; a < 2; ++a)
      out.lambda_relation[a] =
          std::max(out.lambda_relation[a], std::abs(2.0 * spec.lambda + b * qk * qk * sn(a, x, y) * rate[a]));
  }

  const std::vector<int> margin = margin_in.empty() ? uniform_margin(chart, 2 * cfg.reach())
                                                    : std::vector<int>(margin_in.begin(), margin_in.end());
  const std::size_t nodes = chart.nodes();
  GridField psi = GridField::scalar(chart), h4 = psi, h5 = psi, w2 = psi, w3 = psi, n2 = psi, n3 = psi;
  for (std::size_t node = 0; node < nodes; ++node) {
    psi(node) = std::log(-out.d.h(node, 0));
    h4(node) = out.d.v(node, 0);
    h5(node) = out.d.v(node, 3);
    w2(node) = out.nc.N(node, 0);
    w3(node) = out.nc.N(node, 2);
    n2(node) = out.nc.N(node, 1);
    n3(node) = out.nc.N(node, 3);
  }
  GridField line1 = combine(second_derivative(psi, 0, 0, cfg), second_derivative(psi, 1, 1, cfg), 1.0);
  for (double& v : line1.values()) v += spec.lambda;

  GridField h5s = partial_derivative(h5, 2, cfg);
  GridField line2 = GridField::scalar(chart);
  for (std::size_t node = 0; node < nodes; ++node) {
    const double hh = h4(node) * h5(node);
    const double phi = -std::log(std::sqrt(std::abs(hh)) / std::abs(h5s(node)));
    line2(node) = h5s(node) * phi / hh - spec.lambda;
  }

  GridField line3 = combine(partial_derivative(w2, 0, cfg), partial_derivative(w3, 1, cfg), -1.0);
  {
    GridField w2s = partial_derivative(w2, 2, cfg), w3s = partial_derivative(w3, 2, cfg);
    for (std::size_t node = 0; node < nodes; ++node)
      line3(node) += w3(node) * w2s(node) - w2(node) * w3s(node);
  }
  GridField line4 = combine(partial_derivative(n2, 0, cfg), partial_derivative(n3, 1, cfg), -1.0);

  out.residuals = {max_interior(line1, margin), max_interior(line2, margin), max_interior(line3, margin),
                   max_interior(line4, margin)};
  return out;
}

// ---- Lagrange geometrization ------------------------------------------------

namespace {

struct LagrangePoint {
  dense::Mat g;      // 1/2 d^2 L / dy dy
  std::vector<double> spray;
};

LagrangePoint lagrange_point(const LagrangianFn& L, std::span<const double> x, std::span<const double> y) {
  const int n = static_cast<int>(x.size());
  std::vector<HyperDual> X(x.begin(), x.end()), Y(y.begin(), y.end());
  auto eval = [&](std::vector<HyperDual>& A, int i, std::vector<HyperDual>& B, int j) {
    A[i].b = 1.0;
    B[j].c = 1.0;
    const HyperDual r = L(X, Y);
    A[i].b = 0.0;
    B[j].c = 0.0;
    return r;
  };
  LagrangePoint out{dense::Mat(n, n), std::vector<double>(static_cast<std::size_t>(n))};
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) out.g(i, j) = out.g(j, i) = 0.5 * eval(Y, i, Y, j).d;
  dense::Mat gi;
  if (!dense::try_inverse(out.g, gi)) return out;
  std::vector<double> rhs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += eval(Y, i, X, k).d * y[k];
    X[i].b = 1.0;
    s -= L(X, Y).b;
    X[i].b = 0.0;
    rhs[i] = s;
  }
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += gi(i, j) * rhs[i];
    out.spray[j] = 0.25 * s;
  }
  return out;
}

}  // namespace

std::vector<double> lagrange_spray(const LagrangianFn& L, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidInput("lagrange_spray: x and y must have the same length");
  return lagrange_point(L, x, y).spray;
}

LagrangeModel lagrange_geometrize(const LagrangianFn& L, const ChartSpec& chart, double fd_step) {
  chart.validate();
  if (chart.n != chart.m) throw InvalidInput("lagrange_geometrize: chart needs n = m");
  const int n = chart.n;
  LagrangeModel out{GridField::scalar(chart), GridField(chart, {Slot::H, Slot::H}), GridField(chart, {Slot::V}),
                    NConnectionField::zero(chart), {}};
  std::vector<double> u(static_cast<std::size_t>(2 * n));
  double worst = std::numeric_limits<double>::infinity();
  std::size_t worst_node = 0;
  for (std::size_t node = 0; node < chart.nodes(); ++node) {
    node_coordinates(chart, node, u);
    std::span<const double> x(u.data(), n), y(u.data() + n, n);
    {
      std::vector<HyperDual> X(x.begin(), x.end()), Y(y.begin(), y.end());
      out.L(node) = L(X, Y).a;
    }
    const LagrangePoint pt = lagrange_point(L, x, y);
    const double det = std::abs(dense::determinant(pt.g));
    if (det < worst) {
      worst = det;
      worst_node = node;
    }
    if (!(det > dense::kSingularThreshold)) continue;
    dense::store(pt.g, out.Lg.node_ptr(node));
    for (int a = 0; a < n; ++a) out.G(node, a) = pt.spray[a];
    // N_i^a = d G^a / d y^i
    std::vector<double> yy(y.begin(), y.end());
    for (int i = 0; i < n; ++i) {
      auto G_at = [&](double t) {
        const double keep = yy[i];
        yy[i] = t;
        std::vector<double> s = lagrange_point(L, x, yy).spray;
        yy[i] = keep;
        return s;
      };
      const double yi = y[i];
      const std::vector<double> p1 = G_at(yi + fd_step), m1 = G_at(yi - fd_step), p2 = G_at(yi + 2 * fd_step),
                                m2 = G_at(yi - 2 * fd_step);
      for (int a = 0; a < n; ++a)
        out.N.N(node, i * n + a) = (8.0 * (p1[a] - m1[a]) - (p2[a] - m2[a])) / (12.0 * fd_step);
    }
  }
  if (!(worst > dense::kSingularThreshold))
    throw InvalidInput("lagrange_geometrize: degenerate Hessian, worst at " + describe_node(chart, worst_node) +
                       " (|det| " + std::to_string(worst) + ")");
  std::vector<int> sig(static_cast<std::size_t>(2 * n), 1);
  for (int i = 0; i < n; ++i)
    if (out.Lg(0, i * n + i) < 0.0) sig[i] = sig[n + i] = -1;
  GridField vblock(chart, {Slot::V, Slot::V});
  std::copy(out.Lg.values().begin(), out.Lg.values().end(), vblock.values().begin());
  out.sasaki = DMetricField{out.Lg, std::move(vblock), std::move(sig)};
  return out;
}

}  // namespace nhflow
