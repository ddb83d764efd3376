#include "nhflow/functionals.hpp"

#include <cmath>

#include "nhflow/catalog.hpp"
#include "nhflow/dense.hpp"
#include "nhflow/errors.hpp"

namespace nhflow {

namespace {

struct Geometry {
  GridField gamma;
  RicciData ricci;
  GridField vol;
};

Geometry geometry(const DMetricField& d, const NConnectionField& nc, const StencilConfig& cfg) {
  require_same_chart(d.chart(), nc.chart(), "functionals");
  GridField G = full_connection(canonical_dconnection(d, nc, cfg));
  RicciData r = split_ricci(ricci_from_connection(G, nc, cfg), d);
  return {std::move(G), std::move(r), volume_density(d)};
}

struct BlockInverses {
  dense::Mat h, v;
};

BlockInverses inverses_at(const DMetricField& d, std::size_t node) {
  const ChartSpec& c = d.chart();
  BlockInverses out{dense::Mat(c.n, c.n), dense::Mat(c.m, c.m)};
  if (!dense::try_inverse(dense::load(d.h.node_ptr(node), c.n), out.h) ||
      !dense::try_inverse(dense::load(d.v.node_ptr(node), c.m), out.v))
    throw SingularMetric("functionals: singular block at " + describe_node(c, node));
  return out;
}

// g^{ik} g^{jl} A_ij B_kl for the k x k sub-block at offset off of two D x D arrays.
double contract(const dense::Mat& gi, const double* A, const double* B, int D, int off) {
  const int k = static_cast<int>(gi.rows());
  double s = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double a = A[(off + i) * D + off + j];
      if (a == 0.0) continue;
      for (int p = 0; p < k; ++p)
        for (int q = 0; q < k; ++q) s += gi(i, p) * gi(j, q) * a * B[(off + p) * D + off + q];
    }
  return s;
}

double block_gradient2(const dense::Mat& gi, const double* e, int off) {
  const int k = static_cast<int>(gi.rows());
  double s = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) s += gi(i, j) * e[off + i] * e[off + j];
  return s;
}

void require_normalized(const GridField& f, double tau, const DMetricField& d, const char* what) {
  const double mu = mu_integral(f, tau, d);
  if (!(std::abs(mu - 1.0) <= 1e-8))
    throw InvalidInput(std::string(what) + ": mu is not normalized (integral " + std::to_string(mu) + ")");
}

double dot(const GridField& a, const GridField& b) {
  auto x = a.values();
  auto y = b.values();
  double s = 0.0;
  for (std::size_t q = 0; q < x.size(); ++q) s += x[q] * y[q];
  return s;
}

// Unpreconditioned BiCGSTAB for op(x) = b.
// strict: throw when the tolerance is not met, otherwise return the last iterate.
GridField bicgstab(const std::function<GridField(const GridField&)>& op, const GridField& b, const GridField& x0,
                   int max_iter, double tol, bool strict) {
  GridField x = x0;
  GridField r = b;
  {
    GridField ax = op(x);
    auto rv = r.values();
    auto av = ax.values();
    for (std::size_t q = 0; q < rv.size(); ++q) rv[q] -= av[q];
  }
  const double bnorm = std::sqrt(dot(b, b));
  if (bnorm == 0.0) return GridField(b.chart(), b.shape());
  const GridField rhat = r;
  GridField p = r, v(b.chart(), b.shape()), s(b.chart(), b.shape());
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    if (std::sqrt(dot(r, r)) <= tol * bnorm) return x;
    const double rho_new = dot(rhat, r);
    if (rho_new == 0.0) break;
    if (it > 0) {
      const double beta = (rho_new / rho) * (alpha / omega);
      auto pv = p.values();
      auto rv = r.values();
      auto vv = v.values();
      for (std::size_t q = 0; q < pv.size(); ++q) pv[q] = rv[q] + beta * (pv[q] - omega * vv[q]);
    }
    rho = rho_new;
    v = op(p);
    alpha = rho / dot(rhat, v);
    {
      auto sv = s.values();
      auto rv = r.values();
      auto vv = v.values();
      for (std::size_t q = 0; q < sv.size(); ++q) sv[q] = rv[q] - alpha * vv[q];
    }
    if (std::sqrt(dot(s, s)) <= tol * bnorm) {
      auto xv = x.values();
      auto pv = p.values();
      for (std::size_t q = 0; q < xv.size(); ++q) xv[q] += alpha * pv[q];
      return x;
    }
    GridField t = op(s);
    omega = dot(t, s) / dot(t, t);
    auto xv = x.values();
    auto pv = p.values();
    auto sv = s.values();
    auto tv = t.values();
    auto rv = r.values();
    for (std::size_t q = 0; q < xv.size(); ++q) {
      xv[q] += alpha * pv[q] + omega * sv[q];
      rv[q] = sv[q] - omega * tv[q];
    }
    if (omega == 0.0) break;
  }
  if (!strict || std::sqrt(dot(r, r)) <= tol * bnorm * 10.0) return x;
  throw ConvergenceFailure("bicgstab: no convergence");
}

}  // namespace

FValue f_functional(const DMetricField& d, const NConnectionField& nc, const GridField& f, const StencilConfig& cfg) {
  f.check_finite("f_functional potential");
  const ChartSpec& c = d.chart();
  const int n = c.n;
  Geometry geo = geometry(d, nc, cfg);
  GridField e = adapted_gradient(f, nc, cfg);
  GridField hi = GridField::scalar(c), vi = GridField::scalar(c);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const BlockInverses gi = inverses_at(d, node);
    const double w = std::exp(-f(node));
    hi(node) = (geo.ricci.hR(node) + block_gradient2(gi.h, e.node_ptr(node), 0)) * w;
    vi(node) = (geo.ricci.vR(node) + block_gradient2(gi.v, e.node_ptr(node), n)) * w;
  }
  FValue out;
  out.hF = integrate(hi, geo.vol);
  out.vF = integrate(vi, geo.vol);
  out.F = out.hF + out.vF;
  return out;
}

double f_gradient_rate(const DMetricField& d, const NConnectionField& nc, const GridField& f, const StencilConfig& cfg) {
  f.check_finite("f_gradient_rate potential");
  const ChartSpec& c = d.chart();
  const int n = c.n, D = c.dim();
  Geometry geo = geometry(d, nc, cfg);
  GridField T = ricci_from_connection(geo.gamma, nc, cfg);
  const GridField hess = adapted_hessian(f, geo.gamma, nc, cfg);
  for (std::size_t q = 0; q < T.values().size(); ++q) T.values()[q] += hess.values()[q];
  GridField w = GridField::scalar(c);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const BlockInverses gi = inverses_at(d, node);
    const double* t = T.node_ptr(node);
    w(node) = (contract(gi.h, t, t, D, 0) + contract(gi.v, t, t, D, n)) * std::exp(-f(node));
  }
  return 2.0 * integrate(w, geo.vol);
}

double mu_integral(const GridField& f, double tau, const DMetricField& d) {
  if (!(tau > 0.0)) throw InvalidInput("mu: tau must be positive");
  const double pre = std::pow(4.0 * M_PI * tau, -0.5 * d.chart().dim());
  GridField w = GridField::scalar(d.chart());
  for (std::size_t node = 0; node < w.nodes(); ++node) w(node) = pre * std::exp(-f(node));
  return integrate(w, volume_density(d));
}

GridField normalize_mu(const GridField& f, double tau, const DMetricField& d) {
  const double shift = std::log(mu_integral(f, tau, d));
  GridField out = f;
  for (double& x : out.values()) x += shift;
  return out;
}

double w_functional(const DMetricField& d, const NConnectionField& nc, const GridField& f, double tau,
                    const StencilConfig& cfg, WForm form) {
  require_normalized(f, tau, d, "w_functional");
  const ChartSpec& c = d.chart();
  const int n = c.n;
  const double D = c.dim();
  Geometry geo = geometry(d, nc, cfg);
  GridField e = adapted_gradient(f, nc, cfg);
  const double pre = std::pow(4.0 * M_PI * tau, -0.5 * D);
  GridField integrand = GridField::scalar(c);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const BlockInverses gi = inverses_at(d, node);
    const double gh = block_gradient2(gi.h, e.node_ptr(node), 0);
    const double gv = block_gradient2(gi.v, e.node_ptr(node), n);
    const double R = geo.ricci.hR(node) + geo.ricci.vR(node);
    double core = 0.0;
    if (form == WForm::Printed) {
      const double s = R + std::sqrt(std::max(gh, 0.0)) + std::sqrt(std::max(gv, 0.0));
      core = tau * s * s;
    } else {
      core = tau * (R + gh + gv);
    }
    integrand(node) = (core + f(node) - D) * pre * std::exp(-f(node));
  }
  return integrate(integrand, geo.vol);
}

double first_variation_F(const DMetricField& d, const NConnectionField& nc, const GridField& f,
                         const VariationSpec& var, const StencilConfig& cfg, VariationForm form) {
  const ChartSpec& c = d.chart();
  const int n = c.n, m = c.m, D = c.dim();
  for (auto [blk, k] : {std::pair{&var.vh, n}, std::pair{&var.vv, m}})
    for (std::size_t node = 0; node < c.nodes(); ++node)
      for (int p = 0; p < k; ++p)
        for (int q = p + 1; q < k; ++q)
          if ((*blk)(node, p * k + q) != (*blk)(node, q * k + p))
            throw InvalidInput("first_variation_F: variation block is not symmetric at " + describe_node(c, node));
  Geometry geo = geometry(d, nc, cfg);
  GridField H = adapted_hessian(f, geo.gamma, nc, cfg);
  GridField e = adapted_gradient(f, nc, cfg);
  GridField integrand = GridField::scalar(c);
  std::vector<double> X(static_cast<std::size_t>(D * D)), V(static_cast<std::size_t>(D * D));
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const BlockInverses gi = inverses_at(d, node);
    std::fill(V.begin(), V.end(), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) V[i * D + j] = var.vh(node, i * n + j);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) V[(n + a) * D + n + b] = var.vv(node, a * m + b);
    const double* h = H.node_ptr(node);
    for (int q = 0; q < D * D; ++q) X[q] = h[q];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) X[i * D + j] += geo.ricci.Rij(node, i * n + j);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) X[(n + a) * D + n + b] += geo.ricci.Rab(node, a * m + b);

    double hv = 0.0, vv = 0.0, hlap = 0.0, vlap = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        hv += gi.h(i, j) * V[i * D + j];
        hlap += gi.h(i, j) * h[i * D + j];
      }
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        vv += gi.v(a, b) * V[(n + a) * D + n + b];
        vlap += gi.v(a, b) * h[(n + a) * D + n + b];
      }
    const double hg = block_gradient2(gi.h, e.node_ptr(node), 0);
    const double vg = block_gradient2(gi.v, e.node_ptr(node), n);
    const double hvX = contract(gi.h, V.data(), X.data(), D, 0);
    const double vvX = contract(gi.v, V.data(), X.data(), D, n);
    const double hR = geo.ricci.hR(node), vR = geo.ricci.vR(node);
    const double hf = var.hf(node), vf = var.vf(node);
    double val = 0.0;
    if (form == VariationForm::Consistent) {
      val = -hvX - vvX + (0.5 * (hv + vv) - (hf + vf)) * (2.0 * (hlap + vlap) - hg - vg + hR + vR);
    } else {
      val = (-hvX + (0.5 * hv - hf) * (2.0 * hlap - hg) + hR) + (-vvX + (0.5 * vv - vf) * (2.0 * vlap - vg) + vR);
    }
    integrand(node) = val * std::exp(-f(node));
  }
  return integrate(integrand, geo.vol);
}

GridField LaplaceOperator::apply(const GridField& u) const {
  const ChartSpec& c = u.chart();
  const int D = c.dim();
  GridField out = GridField::scalar(c);
  for (int mu = 0; mu < D; ++mu)
    for (int nu = mu; nu < D; ++nu) {
      bool any = false;
      for (std::size_t node = 0; node < c.nodes() && !any; ++node) any = C(node, mu * D + nu) != 0.0;
      if (!any) continue;
      GridField dd = second_derivative(u, mu, nu, cfg);
      const double k = mu == nu ? 1.0 : 2.0;
      for (std::size_t node = 0; node < c.nodes(); ++node) out(node) += k * C(node, mu * D + nu) * dd(node);
    }
  for (int mu = 0; mu < D; ++mu) {
    bool any = false;
    for (std::size_t node = 0; node < c.nodes() && !any; ++node) any = B(node, mu) != 0.0;
    if (!any) continue;
    GridField d1 = partial_derivative(u, mu, cfg);
    for (std::size_t node = 0; node < c.nodes(); ++node) out(node) += B(node, mu) * d1(node);
  }
  return out;
}

LaplaceOperator laplace_operator(const DMetricField& d, const NConnectionField& nc, const StencilConfig& cfg,
                                 LaplaceBlock block) {
  const ChartSpec& c = d.chart();
  const int n = c.n, m = c.m, D = c.dim();
  GridField G = full_connection(canonical_dconnection(d, nc, cfg));
  std::vector<GridField> dN = n_derivatives(nc, cfg);
  LaplaceOperator op{GridField(c, {Slot::A, Slot::A}), GridField(c, {Slot::A}), cfg};
  std::vector<double> eN(static_cast<std::size_t>(D * n * m));
  dense::Mat E(D, D), Gi(D, D);
  const int lo = block == LaplaceBlock::V ? n : 0;
  const int hi = block == LaplaceBlock::H ? n : D;
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const BlockInverses gi = inverses_at(d, node);
    Gi.setZero();
    Gi.topLeftCorner(n, n) = gi.h;
    Gi.bottomRightCorner(m, m) = gi.v;
    E.setIdentity();
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < m; ++a) E(i, n + a) = -nc(node, i, a);
    adapted_n_derivatives_at(nc, dN, node, eN.data());
    const double* g = G.node_ptr(node);
    double* C = op.C.node_ptr(node);
    double* B = op.B.node_ptr(node);
    for (int al = lo; al < hi; ++al)
      for (int be = lo; be < hi; ++be) {
        const double w = Gi(al, be);
        if (w == 0.0) continue;
        for (int mu = 0; mu < D; ++mu)
          for (int nu = 0; nu < D; ++nu) C[mu * D + nu] += w * E(al, mu) * E(be, nu);
        if (be < n)
          for (int a = 0; a < m; ++a) B[n + a] -= w * eN[(al * n + be) * m + a];
        for (int ga = 0; ga < D; ++ga) {
          const double gm = g[(ga * D + be) * D + al];
          if (gm == 0.0) continue;
          for (int mu = 0; mu < D; ++mu) B[mu] -= w * gm * E(ga, mu);
        }
      }
    // symmetrize so apply() can use the upper triangle
    for (int mu = 0; mu < D; ++mu)
      for (int nu = mu + 1; nu < D; ++nu) C[mu * D + nu] = C[nu * D + mu] = 0.5 * (C[mu * D + nu] + C[nu * D + mu]);
  }
  return op;
}

EigenResult bottom_eigenpair(const LaplaceOperator& lap, const GridField& potential, const GridField& volume,
                             const EigenOptions& opt) {
  const ChartSpec& c = potential.chart();
  double vmin = potential(0);
  for (std::size_t node = 0; node < c.nodes(); ++node) vmin = std::min(vmin, potential(node));
  double shift = vmin - 1.0;
  auto A = [&](const GridField& x) {
    GridField y = lap.apply(x);
    for (std::size_t node = 0; node < c.nodes(); ++node) y(node) = -4.0 * y(node) + potential(node) * x(node);
    return y;
  };
  auto shifted = [&](const GridField& x) {
    GridField y = A(x);
    for (std::size_t node = 0; node < c.nodes(); ++node) y(node) -= shift * x(node);
    return y;
  };
  GridField x = GridField::scalar(c);
  for (double& v : x.values()) v = 1.0 / std::sqrt(static_cast<double>(c.nodes()));
  double lambda = dot(x, A(x));
  double last_change = 0.0;
  bool moving = false;
  EigenResult out;
  for (int it = 1; it <= opt.max_iter; ++it) {
    GridField y = bicgstab(shifted, x, x, opt.inner_max, opt.inner_tol, !moving);
    const double nrm = std::sqrt(dot(y, y));
    for (double& v : y.values()) v /= nrm;
    const double next = dot(y, A(y));
    x = std::move(y);
    const double change = std::abs(next - lambda);
    const bool done = change <= opt.tol * std::max(1.0, std::abs(next));
    lambda = next;
    if (done) {
      out.iterations = it;
      out.lambda = lambda;
      GridField sq = x;
      for (double& v : sq.values()) v *= v;
      const double norm = std::sqrt(integrate(sq, volume));
      double mean = 0.0;
      for (double v : x.values()) mean += v;
      const double sign = mean < 0.0 ? -1.0 : 1.0;
      for (double& v : x.values()) v *= sign / norm;
      out.u = std::move(x);
      return out;
    }
    // Clustered bottom spectrum: pull the shift up under the estimate.
    if (it >= 4 && change > 0.3 * last_change) moving = true;
    if (moving) {
      const double guard = std::max(10.0 * change, 1e-9 * std::max(1.0, std::abs(lambda)));
      shift = std::max(shift, lambda - guard);
    }
    last_change = change;
  }
  throw ConvergenceFailure("d_energy: inverse iteration did not converge in " + std::to_string(opt.max_iter) +
                           " iterations");
}

DEnergy d_energy(const DMetricField& d, const NConnectionField& nc, const StencilConfig& cfg,
                 const DEnergyOptions& opt) {
  const ChartSpec& c = d.chart();
  GridField hpot, vpot;
  if (opt.h_potential || opt.v_potential) {
    hpot = opt.h_potential ? *opt.h_potential : GridField::scalar(c);
    vpot = opt.v_potential ? *opt.v_potential : GridField::scalar(c);
  } else {
    RicciData r = curvature_ricci(canonical_dconnection(d, nc, cfg), nc, d, cfg);
    hpot = r.hR;
    vpot = r.vR;
  }
  GridField spot = hpot;
  for (std::size_t node = 0; node < c.nodes(); ++node) spot(node) += vpot(node);
  const GridField vol = volume_density(d);
  DEnergy out;
  EigenResult full = bottom_eigenpair(laplace_operator(d, nc, cfg, LaplaceBlock::Full), spot, vol, opt.eigen);
  out.lambda = full.lambda;
  out.h_lambda = bottom_eigenpair(laplace_operator(d, nc, cfg, LaplaceBlock::H), hpot, vol, opt.eigen).lambda;
  out.v_lambda = bottom_eigenpair(laplace_operator(d, nc, cfg, LaplaceBlock::V), vpot, vol, opt.eigen).lambda;
  out.minimizer = GridField::scalar(c);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const double u = std::abs(full.u(node));
    if (!(u > 0.0)) throw ConvergenceFailure("d_energy: ground state vanishes at " + describe_node(c, node));
    out.minimizer(node) = -2.0 * std::log(u);
  }
  return out;
}

double scale_invariant_energy(double lambda, const DMetricField& d) { return lambda * total_volume(d); }

ThermoReport thermodynamics(const DMetricField& d, const NConnectionField& nc, const GridField& f, double tau,
                            const StencilConfig& cfg) {
  if (!d.riemannian()) throw InvalidInput("thermodynamics: only positive signatures are supported");
  require_normalized(f, tau, d, "thermodynamics");
  const ChartSpec& c = d.chart();
  const int n = c.n, m = c.m, D = c.dim();
  Geometry geo = geometry(d, nc, cfg);
  GridField H = adapted_hessian(f, geo.gamma, nc, cfg);
  GridField e = adapted_gradient(f, nc, cfg);
  const double pre = std::pow(4.0 * M_PI * tau, -0.5 * D);
  GridField ie = GridField::scalar(c), is = GridField::scalar(c), isg = GridField::scalar(c),
            iz = GridField::scalar(c);
  std::vector<double> X(static_cast<std::size_t>(D * D));
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const BlockInverses gi = inverses_at(d, node);
    const double mu = pre * std::exp(-f(node));
    const double grad = block_gradient2(gi.h, e.node_ptr(node), 0) + block_gradient2(gi.v, e.node_ptr(node), n);
    const double R = geo.ricci.hR(node) + geo.ricci.vR(node);
    ie(node) = (R + grad - D / (2.0 * tau)) * mu;
    is(node) = (tau * (R + grad) + f(node) - D) * mu;
    iz(node) = (-f(node) + 0.5 * D) * mu;
    const double* h = H.node_ptr(node);
    std::fill(X.begin(), X.end(), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        X[i * D + j] = geo.ricci.Rij(node, i * n + j) + h[i * D + j] - d.h(node, i * n + j) / (2.0 * tau);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        X[(n + a) * D + n + b] =
            geo.ricci.Rab(node, a * m + b) + h[(n + a) * D + n + b] - d.v(node, a * m + b) / (2.0 * tau);
    isg(node) = (contract(gi.h, X.data(), X.data(), D, 0) + contract(gi.v, X.data(), X.data(), D, n)) * mu;
  }
  ThermoReport out;
  out.energy = -tau * tau * integrate(ie, geo.vol);
  out.entropy = -integrate(is, geo.vol);
  out.fluctuation = 2.0 * std::pow(tau, 4) * integrate(isg, geo.vol);
  out.log_z = integrate(iz, geo.vol);
  return out;
}

ThermoReport lagrange_thermodynamics(const LagrangeModel& model, const GridField& f, double tau,
                                     const StencilConfig& cfg) {
  return thermodynamics(model.sasaki, model.N, f, tau, cfg);
}

FunctionalReport functional_report(const DMetricField& d, const NConnectionField& nc, const GridField& f, double tau,
                                   const StencilConfig& cfg, WForm form) {
  FunctionalReport out;
  const FValue F = f_functional(d, nc, f, cfg);
  out.F = F.F;
  out.hF = F.hF;
  out.vF = F.vF;
  out.W = w_functional(d, nc, f, tau, cfg, form);
  const DEnergy e = d_energy(d, nc, cfg);
  out.lambda = e.lambda;
  out.h_lambda = e.h_lambda;
  out.v_lambda = e.v_lambda;
  out.volume = total_volume(d);
  out.lambda_tilde = out.lambda * out.volume;
  return out;
}

}  // namespace nhflow
