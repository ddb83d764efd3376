#include "nhflow/flow.hpp"

#include <cmath>
#include <limits>

#include "nhflow/dense.hpp"
#include "nhflow/errors.hpp"
#include "nhflow/functionals.hpp"

namespace nhflow {

namespace {

struct Rates {
  GridField h;
  GridField v;
  GridField f;
  bool has_f = false;
};

struct Curvature {
  GridField gamma;
  RicciData ricci;
};

Curvature curvature_of(const FlowState& s, const StencilConfig& cfg) {
  DConnectionCoeffs dc = canonical_dconnection(s.d, s.nc, cfg);
  GridField G = full_connection(dc);
  RicciData r = split_ricci(ricci_from_connection(G, s.nc, cfg), s.d);
  return {std::move(G), std::move(r)};
}

// -2 (sym R - lambda g) for one block.
GridField block_rate(const GridField& R, const GridField& g, int k, double lambda) {
  GridField out(g.chart(), g.shape());
  for (std::size_t node = 0; node < g.nodes(); ++node) {
    const double* r = R.node_ptr(node);
    const double* gg = g.node_ptr(node);
    double* o = out.node_ptr(node);
    for (int p = 0; p < k; ++p)
      for (int q = p; q < k; ++q) {
        const double v = -2.0 * (0.5 * (r[p * k + q] + r[q * k + p]) - lambda * gg[p * k + q]);
        o[p * k + q] = v;
        o[q * k + p] = v;
      }
  }
  return out;
}

void axpy(GridField& y, double a, const GridField& x) {
  auto yv = y.values();
  auto xv = x.values();
  for (std::size_t q = 0; q < yv.size(); ++q) yv[q] += a * xv[q];
}

FlowState stage(const FlowState& base, const Rates& k, double a, bool coupled, const FlowConfig& cfg) {
  FlowState s = base;
  axpy(s.d.h, a, k.h);
  axpy(s.d.v, a, k.v);
  if (k.has_f) axpy(s.f, a, k.f);
  s.chi = base.chi + a;
  if (coupled) s.tau = base.tau - a;
  if (cfg.evolve_N) s.nc = cfg.schedule.value(s.chi);
  if (cfg.boundary) cfg.boundary(s);
  return s;
}

Rates combine(const Rates& k1, const Rates& k2, const Rates& k3, const Rates& k4) {
  Rates out = k1;
  for (auto [o, a, b, c] : {std::tuple{&out.h, &k2.h, &k3.h, &k4.h}, std::tuple{&out.v, &k2.v, &k3.v, &k4.v},
                            std::tuple{&out.f, &k2.f, &k3.f, &k4.f}}) {
    if (o == &out.f && !out.has_f) continue;
    auto ov = o->values();
    auto av = a->values();
    auto bv = b->values();
    auto cv = c->values();
    for (std::size_t q = 0; q < ov.size(); ++q) ov[q] = (ov[q] + 2.0 * av[q] + 2.0 * bv[q] + cv[q]) / 6.0;
  }
  return out;
}

void check_blocks(const FlowState& s, double threshold, const FlowState& last) {
  const ChartSpec& c = s.chart();
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const double dh = dense::determinant(dense::load(s.d.h.node_ptr(node), c.n));
    const double dv = dense::determinant(dense::load(s.d.v.node_ptr(node), c.m));
    if (!(std::abs(dh) >= threshold) || !(std::abs(dv) >= threshold))
      throw FlowHalted("flow: metric block degenerated at " + describe_node(c, node), last);
  }
}

FlowState advance(const FlowState& s, const FlowConfig& cfg, bool coupled,
                  const std::function<Rates(const FlowState&)>& rates) {
  cfg.validate();
  if (coupled && s.tau - cfg.dt <= 0.0) throw FlowHalted("flow: tau would reach zero", s);
  try {
    FlowState out;
    const Rates k1 = rates(s);
    if (cfg.scheme == Scheme::Euler) {
      out = stage(s, k1, cfg.dt, coupled, cfg);
    } else {
      const Rates k2 = rates(stage(s, k1, 0.5 * cfg.dt, coupled, cfg));
      const Rates k3 = rates(stage(s, k2, 0.5 * cfg.dt, coupled, cfg));
      const Rates k4 = rates(stage(s, k3, cfg.dt, coupled, cfg));
      out = stage(s, combine(k1, k2, k3, k4), cfg.dt, coupled, cfg);
    }
    check_blocks(out, cfg.det_threshold, s);
    return out;
  } catch (const SingularMetric& e) {
    throw FlowHalted(std::string("flow: ") + e.what(), s);
  }
}

}  // namespace

FlowState FlowState::from(DMetricField d, NConnectionField nc, double tau) {
  GridField f = GridField::scalar(d.chart());
  return FlowState{std::move(d), std::move(nc), std::move(f), 0.0, tau};
}

void FlowConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("flow config: dt must be positive");
  if (steps < 0) throw InvalidInput("flow config: steps must be non-negative");
  if (evolve_N && !(schedule.value && schedule.rate))
    throw InvalidInput("flow config: evolve_N needs an N(chi) schedule with its rate");
  stencil.validate();
}

FlowHalted::FlowHalted(const std::string& what, FlowState last)
    : std::runtime_error(what), last_(std::make_shared<const FlowState>(std::move(last))) {}

MetricRate nadapted_rate(const FlowState& s, const FlowConfig& cfg) {
  const ChartSpec& c = s.chart();
  RicciData r = curvature_of(s, cfg.stencil).ricci;
  return {block_rate(r.Rij, s.d.h, c.n, cfg.lambda), block_rate(r.Rab, s.d.v, c.m, cfg.lambda)};
}

MetricRate coordinate_rate(const FlowState& s, const FlowConfig& cfg) {
  const ChartSpec& c = s.chart();
  const int n = c.n, m = c.m, D = c.dim();
  const double lam = cfg.lambda;
  GridField R = ricci_from_connection(full_connection(canonical_dconnection(s.d, s.nc, cfg.stencil)), s.nc, cfg.stencil);
  std::optional<NConnectionField> Ndot;
  if (cfg.evolve_N) Ndot = cfg.schedule.rate(s.chi);
  MetricRate out{GridField(c, s.d.h.shape()), GridField(c, s.d.v.shape())};
  std::vector<double> Rs(static_cast<std::size_t>(D * D));
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const double* r = R.node_ptr(node);
    for (int a = 0; a < D; ++a)
      for (int b = 0; b < D; ++b) Rs[a * D + b] = 0.5 * (r[a * D + b] + r[b * D + a]);
    const double* gh = s.d.h.node_ptr(node);
    const double* gv = s.d.v.node_ptr(node);
    auto N = [&](int i, int a) { return s.nc(node, i, a); };
    auto Rv = [&](int a, int b) { return Rs[(n + a) * D + n + b]; };
    double* oh = out.h.node_ptr(node);
    double* ov = out.v.node_ptr(node);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) ov[a * m + b] = -2.0 * (Rv(a, b) - lam * gv[a * m + b]);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        // coordinate components of R and g
        double Rc = Rs[i * D + j];
        double gc = gh[i * n + j];
        double nn = 0.0;
        for (int a = 0; a < m; ++a) {
          Rc += N(i, a) * Rs[(n + a) * D + j] + N(j, a) * Rs[i * D + n + a];
          for (int b = 0; b < m; ++b) {
            Rc += N(i, a) * N(j, b) * Rv(a, b);
            gc += N(i, a) * N(j, b) * gv[a * m + b];
            nn += N(i, a) * N(j, b) * (Rv(a, b) - lam * gv[a * m + b]);
          }
        }
        double rate = 2.0 * (nn - Rc + lam * gc);
        if (Ndot) {
          const NConnectionField& Nd = *Ndot;
          for (int a = 0; a < m; ++a)
            for (int b = 0; b < m; ++b)
              rate -= gv[a * m + b] * (Nd(node, i, a) * N(j, b) + N(i, a) * Nd(node, j, b));
        }
        oh[i * n + j] = rate;
        oh[j * n + i] = rate;
      }
  }
  return out;
}

namespace {

GridField potential_rate_with(const FlowState& s, const Curvature& cv, const FlowConfig& cfg) {
  const ChartSpec& c = s.chart();
  // -lap f + |D f|^2 = e^{f} lap(e^{-f})
  GridField u = s.f;
  for (double& x : u.values()) x = std::exp(-x);
  GridField lap = d_laplacian(u, cv.gamma, s.d, s.nc, cfg.stencil);
  double shift = 0.0;
  const double dim = c.dim();
  switch (cfg.time_term) {
    case PotentialTimeTerm::Conserving: shift = dim / (2.0 * s.tau); break;
    case PotentialTimeTerm::Printed: shift = dim / s.tau; break;
    case PotentialTimeTerm::None: break;
  }
  GridField out = GridField::scalar(c);
  for (std::size_t node = 0; node < c.nodes(); ++node)
    out(node) = std::exp(s.f(node)) * lap(node) - cv.ricci.hR(node) - cv.ricci.vR(node) + shift;
  return out;
}

}  // namespace

GridField potential_rate(const FlowState& s, const FlowConfig& cfg) {
  return potential_rate_with(s, curvature_of(s, cfg.stencil), cfg);
}

FlowState flow_step_nadapted(const FlowState& s, const FlowConfig& cfg) {
  return advance(s, cfg, false, [&](const FlowState& x) {
    MetricRate r = nadapted_rate(x, cfg);
    return Rates{std::move(r.h), std::move(r.v), GridField{}, false};
  });
}

FlowState flow_step_coordinate(const FlowState& s, const FlowConfig& cfg) {
  return advance(s, cfg, false, [&](const FlowState& x) {
    MetricRate r = coordinate_rate(x, cfg);
    return Rates{std::move(r.h), std::move(r.v), GridField{}, false};
  });
}

FlowState coupled_flow_step(const FlowState& s, const FlowConfig& cfg) {
  FlowConfig plain = cfg;
  plain.lambda = 0.0;
  return advance(s, plain, true, [&](const FlowState& x) {
    MetricRate r = nadapted_rate(x, plain);
    return Rates{std::move(r.h), std::move(r.v), potential_rate(x, plain), true};
  });
}

std::vector<FlowState> coupled_trajectory(const FlowState& start, const GridField& f_end, const FlowConfig& cfg,
                                          bool normalize_end) {
  cfg.validate();
  require_same_chart(f_end.chart(), start.chart(), "coupled_trajectory");
  f_end.check_finite("coupled_trajectory terminal potential");
  if (start.tau - cfg.steps * cfg.dt <= 0.0) throw FlowHalted("flow: tau would reach zero", start);
  FlowConfig half = cfg;
  half.lambda = 0.0;
  half.dt = 0.5 * cfg.dt;
  // metric at every half step
  std::vector<FlowState> g{start};
  g.reserve(static_cast<std::size_t>(2 * cfg.steps + 1));
  for (int k = 0; k < 2 * cfg.steps; ++k) {
    FlowState next = flow_step_nadapted(g.back(), half);
    next.tau = start.tau - (k + 1) * half.dt;
    g.push_back(std::move(next));
  }

  std::vector<FlowState> out(static_cast<std::size_t>(cfg.steps + 1));
  GridField f = f_end;
  if (normalize_end) f = normalize_mu(f, g.back().tau, g.back().d);
  // curvature of the most recently used stored states, newest first
  std::size_t cached_index = g.size();
  Curvature cached;
  auto curvature_at = [&](std::size_t k) -> const Curvature& {
    if (k != cached_index) {
      cached = curvature_of(g[k], cfg.stencil);
      cached_index = k;
    }
    return cached;
  };
  auto rate = [&](std::size_t k, const GridField& pot) {
    FlowState x = g[k];
    x.f = pot;
    return potential_rate_with(x, curvature_at(k), cfg);
  };
  auto shifted = [](const GridField& base, double a, const GridField& r) {
    GridField o = base;
    axpy(o, a, r);
    return o;
  };
  const double dt = cfg.dt;
  for (int k = cfg.steps; k > 0; --k) {
    const std::size_t top = static_cast<std::size_t>(2 * k);
    out[static_cast<std::size_t>(k)] = g[top];
    out[static_cast<std::size_t>(k)].f = f;
    const GridField k1 = rate(top, f);
    if (cfg.scheme == Scheme::Euler) {
      axpy(f, -dt, k1);
    } else {
      const GridField k2 = rate(top - 1, shifted(f, -0.5 * dt, k1));
      const GridField k3 = rate(top - 1, shifted(f, -0.5 * dt, k2));
      const GridField k4 = rate(top - 2, shifted(f, -dt, k3));
      auto fv = f.values();
      for (std::size_t q = 0; q < fv.size(); ++q)
        fv[q] -= dt / 6.0 * (k1.values()[q] + 2.0 * k2.values()[q] + 2.0 * k3.values()[q] + k4.values()[q]);
    }
    f.check_finite("coupled_trajectory potential");
  }
  out[0] = g[0];
  out[0].f = f;
  return out;
}

double suggested_dt(const FlowState& s, const StencilConfig& cfg) {
  const ChartSpec& c = s.chart();
  double h = std::numeric_limits<double>::infinity();
  for (int mu = 0; mu < c.dim(); ++mu) h = std::min(h, c.spacing(mu));
  RicciData r = curvature_of(s, cfg).ricci;
  const double R = std::max(max_abs(r.Rij), max_abs(r.Rab));
  if (R == 0.0) return std::numeric_limits<double>::infinity();
  return 0.2 * h * h / R;
}

FlowDiagnostics diagnostics(const FlowState& s, const StencilConfig& cfg, std::span<const int> margin) {
  const ChartSpec& c = s.chart();
  RicciData r = curvature_of(s, cfg).ricci;
  FlowDiagnostics out;
  out.chi = s.chi;
  out.tau = s.tau;
  const double inf = std::numeric_limits<double>::infinity();
  out.hR_min = out.vR_min = out.det_h_min = out.det_v_min = inf;
  out.hR_max = out.vR_max = out.det_h_max = out.det_v_max = -inf;
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    if (!is_interior(c, node, margin)) continue;
    out.hR_min = std::min(out.hR_min, r.hR(node));
    out.hR_max = std::max(out.hR_max, r.hR(node));
    out.vR_min = std::min(out.vR_min, r.vR(node));
    out.vR_max = std::max(out.vR_max, r.vR(node));
    for (std::size_t q = 0; q < r.Ria.components(); ++q) {
      out.R_ia_max = std::max(out.R_ia_max, std::abs(r.Ria(node, q)));
      out.R_ai_max = std::max(out.R_ai_max, std::abs(r.Rai(node, q)));
    }
    const double dh = dense::determinant(dense::load(s.d.h.node_ptr(node), c.n));
    const double dv = dense::determinant(dense::load(s.d.v.node_ptr(node), c.m));
    out.det_h_min = std::min(out.det_h_min, dh);
    out.det_h_max = std::max(out.det_h_max, dh);
    out.det_v_min = std::min(out.det_v_min, dv);
    out.det_v_max = std::max(out.det_v_max, dv);
  }
  return out;
}

FlowState run_flow(FlowState s, const FlowConfig& cfg, Stepper stepper,
                   const std::function<void(const FlowState&)>& observe) {
  for (int k = 0; k < cfg.steps; ++k) {
    switch (stepper) {
      case Stepper::NAdapted: s = flow_step_nadapted(s, cfg); break;
      case Stepper::Coordinate: s = flow_step_coordinate(s, cfg); break;
      case Stepper::Coupled: s = coupled_flow_step(s, cfg); break;
    }
    if (observe) observe(s);
  }
  return s;
}

FrameEvolution frame_evolution_step(const FrameMatrices& frames, const RicciData& ricci, const DMetricField& d,
                                    double dt) {
  const ChartSpec& c = d.chart();
  const int n = c.n, m = c.m, D = c.dim();
  FrameEvolution out{frames, 0.0};
  dense::Mat B(D, D), M(D, D), fw(D, D);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    B = dense::load(frames.inverse.node_ptr(node), D);
    // M = blockdiag(g^{ij} R_(jk), g^{ab} R_(bc))
    M.setZero();
    for (auto [blk, R, k, off] : {std::tuple{&d.h, &ricci.Rij, n, 0}, std::tuple{&d.v, &ricci.Rab, m, n}}) {
      dense::Mat gi(k, k);
      if (!dense::try_inverse(dense::load(blk->node_ptr(node), k), gi))
        throw SingularMetric("frame_evolution_step: singular block at " + describe_node(c, node));
      dense::Mat Rs(k, k);
      for (int p = 0; p < k; ++p)
        for (int q = 0; q < k; ++q) Rs(p, q) = 0.5 * ((*R)(node, p * k + q) + (*R)(node, q * k + p));
      M.block(off, off, k, k) = gi * Rs;
    }
    const dense::Mat Bn = B + dt * B * M;
    if (!dense::try_inverse(Bn, fw))
      throw SingularMetric("frame_evolution_step: singular frame at " + describe_node(c, node));
    dense::store(Bn, out.frames.inverse.node_ptr(node));
    dense::store(fw, out.frames.forward.node_ptr(node));
  }
  DMetricField rebuilt = metric_from_frames(out.frames, d.signature);
  for (std::size_t node = 0; node < c.nodes(); ++node)
    for (auto [blk, R, nb, k] : {std::tuple{&d.h, &ricci.Rij, &rebuilt.h, n}, std::tuple{&d.v, &ricci.Rab, &rebuilt.v, m}})
      for (int p = 0; p < k; ++p)
        for (int q = 0; q < k; ++q) {
          const double direct =
              (*blk)(node, p * k + q) + dt * ((*R)(node, p * k + q) + (*R)(node, q * k + p));
          out.drift = std::max(out.drift, std::abs((*nb)(node, p * k + q) - direct));
        }
  return out;
}

SolitonResidual soliton_residual(const FlowState& s, const SolitonSpec& spec, const StencilConfig& cfg,
                                 std::span<const int> margin) {
  const ChartSpec& c = s.chart();
  require_same_chart(c, spec.phi.chart(), "soliton_residual");
  const int n = c.n, m = c.m, D = c.dim();
  Curvature cv = curvature_of(s, cfg);
  GridField H = adapted_hessian(spec.phi, cv.gamma, s.nc, cfg);
  SolitonResidual out;
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    if (!is_interior(c, node, margin)) continue;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        out.h = std::max(out.h, std::abs(cv.ricci.Rij(node, i * n + j) + H(node, i * D + j) -
                                         2.0 * spec.h_lambda0 * s.d.h(node, i * n + j)));
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        out.v = std::max(out.v, std::abs(cv.ricci.Rab(node, a * m + b) + H(node, (n + a) * D + n + b) -
                                         2.0 * spec.v_lambda0 * s.d.v(node, a * m + b)));
  }
  return out;
}

HomotheticFactors homothetic_reference(double chi, double h_lambda0, double v_lambda0) {
  HomotheticFactors out;
  out.rho_h2 = 1.0 - 2.0 * h_lambda0 * chi;
  out.rho_v2 = 1.0 - 2.0 * v_lambda0 * chi;
  if (h_lambda0 > 0.0) out.shrink_h = 1.0 / (2.0 * h_lambda0);
  if (v_lambda0 > 0.0) out.shrink_v = 1.0 / (2.0 * v_lambda0);
  return out;
}

}  // namespace nhflow
