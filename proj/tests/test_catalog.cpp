#include <cmath>

#include "doctest.h"
#include "nhflow/catalog.hpp"
#include "nhflow/errors.hpp"
#include "nhflow/functionals.hpp"

using namespace nhflow;

namespace {

const StencilConfig kOrder2{2};
const StencilConfig kOrder4{4};

ChartSpec pp_window(int res) {
  return make_chart(2, 2, {1.0, 1.0, 2.0, 1.0}, {res, res, res, 8}, {1.5, -0.5, 0.5, 0.0});
}

// Wave-type data: ln b and Phi are functions of x + y and x - y.
Solitonic4dSpec solitonic_spec() {
  Solitonic4dSpec s;
  s.psi = [](double x, double y) { return 0.1 * std::exp(x) * std::cos(y); };
  s.b_breve = [](double x, double y) { return std::exp(0.2 * std::sin(x + y) + 0.1 * std::cos(x - y)); };
  s.k = [](double p) { return 1.0 + 0.1 * std::sin(p); };
  s.h0 = 2.0;
  // Phi = 0.3 sin(x + y) + 0.2 cos(x - y); sn_2 = Phi_y, sn_3 = Phi_x
  s.sn[0] = [](double x, double y) { return 0.3 * std::cos(x + y) + 0.2 * std::sin(x - y); };
  s.sn[1] = [](double x, double y) { return 0.3 * std::cos(x + y) - 0.2 * std::sin(x - y); };
  return s;
}

ChartSpec solitonic_window(int res) {
  return make_chart(2, 2, {1.0, 1.6, 2.0, 1.0}, {res, res, res, 8}, {0.0, 0.0, -1.0, 0.0});
}

HyperDual free_particle(std::span<const HyperDual>, std::span<const HyperDual> y) { return y[0] * y[0] + y[1] * y[1]; }

ChartSpec lagrange_window(int res) {
  return make_chart(2, 2, {1.0, 1.0, 1.0, 1.0}, {res, res, res, res}, {0.0, 0.0, 0.5, -0.5});
}

}  // namespace

TEST_CASE("pp-wave profiles") {
  PPWaveSpec mono;
  CHECK(pp_wave_kappa_value(mono, 1.0, 2.0, M_PI / 2) == -3.0);
  PPWaveSpec packet{PPWaveSpec::Kind::Packet, {}, 1.0};
  CHECK(pp_wave_kappa_value(packet, 1.0, 1.0, 1.0) == 0.0);
  CHECK(pp_wave_kappa_value(packet, 1.0, 1.0, -2.0) == 0.0);
  CHECK(pp_wave_kappa_value(packet, 1.0, 1.0, 0.5) == doctest::Approx(1.0 / (4.0 * std::exp(0.75))));
  CHECK_THROWS_AS(pp_wave_kappa(packet, make_chart(2, 1, {2, 2, 2}, {8, 8, 8}, {-1, -1, -1})), InvalidInput);
  CHECK_NOTHROW(pp_wave_kappa(packet, make_chart(2, 1, {1, 1, 2}, {8, 8, 8}, {0.5, 0.5, -1})));

  const PPWaveKappa k = pp_wave_kappa(mono, make_chart(2, 1, {1, 1, 1}, {16, 16, 16}, {1.5, -0.5, 0.5}));
  CHECK(k.harmonicity < 1e-10);
  PPWaveSpec square{PPWaveSpec::Kind::Custom, [](double x, double, double) { return x * x + 1.0; }};
  CHECK(pp_wave_kappa(square, make_chart(2, 1, {1, 1, 1}, {16, 16, 16})).harmonicity > 1.0);
}

TEST_CASE("pp-wave metric assembly") {
  PPWaveSpec one{PPWaveSpec::Kind::Custom, [](double, double, double) { return 1.0; }, 1.0, 1};
  const ChartSpec c5 = make_chart(3, 2, {1, 1, 1, 1, 1}, {8, 8, 8, 8, 8});
  const FullMetricField g = build_pp_wave_5d(one, c5);
  const double diag[5] = {1.0, -1.0, -1.0, -2.0, 0.125};
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b) CHECK(g.g(17, a * 5 + b) == (a == b ? diag[a] : 0.0));
  // kappa = (x^2 - y^2) sin p crosses zero on |x| = |y|
  CHECK_THROWS_AS(build_pp_wave_5d(PPWaveSpec{}, make_chart(2, 2, {2, 2, 1, 1}, {8, 8, 8, 8}, {-1, -1, 0.5, 0})),
                  InvalidInput);
}

TEST_CASE("monochromatic pp-wave Ricci converges to the symbolic oracle") {
  // center node (x, y, p) = (2, 0, 1.5); values from tests/oracles/ppwave_oracle.py
  const double oracle[4][3] = {{0, 0, -0.5}, {0, 2, -0.035457422151326224}, {2, 2, 3.4849510312737483},
                               {3, 3, 0.017646929217531695}};
  double err[2] = {0, 0};
  for (int r : {0, 1}) {
    const ChartSpec c = pp_window(16 << r);
    const FullMetricField g = build_pp_wave_5d(PPWaveSpec{}, c);
    const GridField R = ricci_from_connection(levi_civita(g, kOrder2).gamma, NConnectionField::zero(c), kOrder2);
    const int mid = 8 << r;
    const std::size_t node = mid * c.stride(0) + mid * c.stride(1) + mid * c.stride(2);
    for (const auto& o : oracle)
      err[r] = std::max(err[r], std::abs(R(node, static_cast<int>(o[0]) * 4 + static_cast<int>(o[1])) - o[2]));
  }
  CHECK(err[1] < 1e-2);
  CHECK(err[0] / err[1] > 3.5);
}

TEST_CASE("sine-Gordon kink") {
  CHECK(sine_gordon_kink(0.0) == doctest::Approx(M_PI).epsilon(1e-15));
  CHECK(std::abs(sine_gordon_kink(16.0) - 2 * M_PI) < 1e-6);
  CHECK(std::abs(sine_gordon_kink(-16.0, -1) - 2 * M_PI) < 1e-6);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double p = -10.0 + 20.0 * k / 999.0;
    worst = std::max({worst, sine_gordon_residual(p, 1), sine_gordon_residual(p, -1)});
  }
  CHECK(worst < 1e-12);
  // monotone increasing for the + sign
  for (int k = 0; k < 100; ++k) CHECK(sine_gordon_kink(-5 + 0.1 * (k + 1)) > sine_gordon_kink(-5 + 0.1 * k));
  // analytic derivative against a central difference
  CHECK(std::abs(sine_gordon_kink_derivative(0.7) - central_difference([](double p) { return sine_gordon_kink(p); }, 0.7)) <
        1e-10);
}

TEST_CASE("3d solitonic operator") {
  SUBCASE("constant and x-only profiles are annihilated") {
    const ChartSpec c = make_chart(2, 1, {2 * M_PI, 2 * M_PI, 2 * M_PI}, {16, 16, 16});
    CHECK(solitonic_residual_3d(make_grid(c, [](std::span<const double>) { return 0.7; }), 1, kOrder2, {}) == 0.0);
    GridField s = make_grid(c, [](std::span<const double> u) { return std::sin(u[0]); });
    CHECK(solitonic_residual_3d(s, 1, kOrder2, {}) < 1e-13);
  }
  SUBCASE("travelling KdV soliton converges at stencil order") {
    // eta = c/2 sech^2(sqrt(c)/2 (p - c x)) solves eta_x + 6 eta eta_p + eta_ppp = 0
    const double cs = 1.0;
    auto eta = [cs](std::span<const double> u) {
      const double s = 1.0 / std::cosh(0.5 * std::sqrt(cs) * (u[2] - cs * u[0]));
      return 0.5 * cs * s * s;
    };
    double res[2];
    for (int r : {0, 1}) {
      const ChartSpec c = make_chart(2, 1, {1.0, 1.0, 8.0}, {16 << r, 8, 64 << r}, {0.0, 0.0, -4.0});
      const std::vector<int> margin{2 << r, 0, 8 << r};
      res[r] = 0.0;
      for (int eps : {1, -1}) res[r] = std::max(res[r], solitonic_residual_3d(make_grid(c, eta), eps, kOrder2, margin));
    }
    CHECK(res[1] < 2e-3);
    CHECK(std::log2(res[0] / res[1]) > 1.9);
  }
  SUBCASE("y-curvature shows up for eps of either sign") {
    const ChartSpec c = make_chart(2, 1, {2 * M_PI, 2 * M_PI, 2 * M_PI}, {32, 32, 32});
    GridField s = make_grid(c, [](std::span<const double> u) { return std::cos(u[1]); });
    CHECK(std::abs(solitonic_residual_3d(s, -1, kOrder4, {}) - 1.0) < 1e-4);
  }
}

TEST_CASE("Einstein ansatz") {
  const ChartSpec c = make_chart(2, 2, {1.0, 1.0, 1.0, 1.0}, {16, 16, 16, 8}, {-0.5, -0.5, 0.5, 0.0});
  EinsteinAnsatzSpec base;
  base.g2 = base.g3 = [](double, double) { return 1.0; };
  base.f0 = [](double x2, double x3) { return 0.3 * std::sin(x2) * x3; };
  base.f = [&base](double x2, double x3, double v) { return base.f0(x2, x3) + v; };
  base.h0 = [](double x2, double) { return 1.0 + 0.1 * x2; };
  base.h_lambda = [](double, double, double) { return 0.0; };
  base.v_lambda = [](double, double) { return 0.0; };
  base.sigma0 = [](double, double) { return 1.0; };

  SUBCASE("closed-form substitution") {
    const EinsteinAnsatz e = build_einstein_ansatz(base, c);
    std::vector<double> u(4);
    double worst = 0.0;
    for (std::size_t node = 0; node < c.nodes(); ++node) {
      node_coordinates(c, node, u);
      const double h0 = 1.0 + 0.1 * u[0];
      worst = std::max({worst, std::abs(e.d.v(node, 0) - h0 * h0), std::abs(e.d.v(node, 3) - u[2] * u[2])});
      for (int q = 0; q < 4; ++q) worst = std::max(worst, std::abs(e.nc.N(node, q)));
    }
    CHECK(worst < 1e-10);
  }
  SUBCASE("Liouville block with trivial N") {
    EinsteinAnsatzSpec s = base;
    // conformal factor of the unit sphere: K = 1
    s.g2 = s.g3 = [](double x, double y) { return std::pow(1.0 + (x * x + y * y) / 4.0, -2.0); };
    s.f0 = [](double, double) { return 0.0; };
    s.f = [](double, double, double v) { return v; };
    s.h0 = [](double, double) { return 1.0; };
    s.v_lambda = [](double, double) { return 1.0; };
    double h[2], v[2];
    for (int r : {0, 1}) {
      const int n = 16 << r;
      const ChartSpec cr = make_chart(2, 2, {1.0, 1.0, 1.0, 1.0}, {n, n, n, 8}, {-0.5, -0.5, 0.5, 0.0});
      const std::vector<int> margin{n / 8, n / 8, n / 8, 0};
      const EinsteinAnsatz e = build_einstein_ansatz(s, cr, {}, margin);
      h[r] = e.residuals.h;
      v[r] = e.residuals.v;
      CHECK(e.residuals.hv < 1e-12);
      CHECK(e.residuals.vh < 1e-12);
    }
    CHECK(h[1] < 1e-3);
    CHECK(v[1] < 1e-2);
    CHECK(h[0] / h[1] > 3.5);
    CHECK(v[0] / v[1] > 3.5);
  }
  SUBCASE("generic spec round-trips through the full metric") {
    EinsteinAnsatzSpec s = base;
    s.h_lambda = [](double x2, double, double v) { return 0.5 + 0.2 * std::sin(x2 + v); };
    s.sigma0 = [](double x2, double x3) { return 2.0 + 0.3 * std::cos(x2 * x3); };
    s.n1[0] = [](double x2, double) { return 0.1 * x2; };
    s.n2[1] = [](double, double x3) { return 0.05 * std::cos(x3); };
    const EinsteinAnsatz e = build_einstein_ansatz(s, c);
    double wmax = 0.0;
    for (std::size_t node = 0; node < c.nodes(); ++node) wmax = std::max(wmax, std::abs(e.nc.N(node, 0)));
    CHECK(wmax > 1e-3);
    const auto [d2, n2] = split_full_metric(assemble_full_metric(e.d, e.nc), e.d.signature);
    CHECK(max_abs_diff(n2.N, e.nc.N) < 1e-12);
    CHECK(max_abs_diff(d2.v, e.d.v) < 1e-12);
    // w_i d_v sigma4 + d_i sigma4 = 0 with stencil derivatives of the stored sigma4
    const GridField sv = partial_derivative(e.sigma4, 2, kOrder4);
    const std::vector<int> margin{2, 2, 2, 0};
    for (int i = 0; i < 2; ++i) {
      const GridField si = partial_derivative(e.sigma4, i, kOrder4);
      GridField res = GridField::scalar(c);
      for (std::size_t node = 0; node < c.nodes(); ++node) res(node) = e.nc.N(node, i * 2) * sv(node) + si(node);
      CHECK(max_abs_interior(res, margin) < 1e-5);
    }
  }
  SUBCASE("sign change of d_v f is rejected") {
    EinsteinAnsatzSpec s = base;
    s.f = [](double, double, double v) { return (v - 1.0) * (v - 1.0); };
    CHECK_THROWS_AS(build_einstein_ansatz(s, c), InvalidInput);
  }
}

TEST_CASE("solitonic 4d metric") {
  const Solitonic4dSpec spec = solitonic_spec();
  SUBCASE("residual lines converge at stencil order") {
    std::array<double, 4> res[2];
    for (int r : {0, 1}) {
      const int n = 16 << r;
      const std::vector<int> margin{n / 8, n / 8, n / 8, 0};
      const Solitonic4d s = build_solitonic_4d(spec, 0.0, solitonic_window(n), {}, margin);
      res[r] = s.residuals;
      CHECK(s.lambda_relation[0] == 0.0);
      CHECK(s.lambda_relation[1] == 0.0);
    }
    for (int line = 0; line < 4; ++line) {
      CAPTURE(line);
      CHECK(res[1][line] < 1e-3);
      CHECK(std::log2(res[0][line] / res[1][line]) > 1.9);
    }
  }
  SUBCASE("w ratio and signature") {
    const ChartSpec c = solitonic_window(16);
    const Solitonic4d s = build_solitonic_4d(spec, 0.3, c);
    CHECK(s.d.signature == std::vector<int>{-1, -1, -1, 1});
    std::vector<double> u(4);
    for (std::size_t node = 0; node < c.nodes(); node += 97) {
      node_coordinates(c, node, u);
      const double lx = 0.2 * std::cos(u[0] + u[1]) - 0.1 * std::sin(u[0] - u[1]);
      const double ly = 0.2 * std::cos(u[0] + u[1]) + 0.1 * std::sin(u[0] - u[1]);
      CHECK(std::abs(s.nc.N(node, 0) * ly - s.nc.N(node, 2) * lx) < 1e-10);
    }
  }
  SUBCASE("h0 away from 2 breaks the phi line") {
    Solitonic4dSpec s = spec;
    s.h0 = 3.0;
    CHECK(build_solitonic_4d(s, 0.0, solitonic_window(16)).residuals[1] > 1e-2);
  }
  SUBCASE("lambda relation with flowing n") {
    Solitonic4dSpec s = spec;
    s.rn[0] = s.rn[1] = [](double chi) { return 1.0 - chi; };
    s.rn_rate[0] = s.rn_rate[1] = [](double) { return -1.0; };
    const Solitonic4d r = build_solitonic_4d(s, 0.5, solitonic_window(16));
    CHECK(r.lambda_relation[0] > 0.1);
    CHECK(r.residuals[3] < 1e-2);
  }
  SUBCASE("vanishing qk is rejected") {
    Solitonic4dSpec s = spec;
    s.k = [](double p) { return p; };
    CHECK_THROWS_AS(build_solitonic_4d(s, 0.0, solitonic_window(16)), InvalidInput);
  }
}

TEST_CASE("Lagrange geometrization") {
  const ChartSpec c = lagrange_window(8);
  SUBCASE("free particle is flat") {
    const LagrangeModel m = lagrange_geometrize(free_particle, c);
    const DConnectionCoeffs dc = canonical_dconnection(m.sasaki, m.N, kOrder2);
    for (const GridField* f : {&dc.Lh, &dc.Lv, &dc.Ch, &dc.Cv}) CHECK(max_abs(*f) < 1e-12);
    CHECK(max_abs(m.G) == 0.0);
    CHECK(max_abs(m.N.N) == 0.0);
    CHECK(max_abs_diff(m.sasaki.h, m.sasaki.v) == 0.0);
  }
  SUBCASE("constant quadratic form") {
    auto L = [](std::span<const HyperDual>, std::span<const HyperDual> y) {
      return 2.0 * y[0] * y[0] + 0.6 * y[0] * y[1] + y[1] * y[1];
    };
    const LagrangeModel m = lagrange_geometrize(L, c);
    CHECK(std::abs(m.Lg(5, 0) - 2.0) < 1e-15);
    CHECK(std::abs(m.Lg(5, 1) - 0.3) < 1e-15);
    CHECK(std::abs(m.Lg(5, 3) - 1.0) < 1e-15);
    CHECK(max_abs(m.N.N) == 0.0);
  }
  SUBCASE("perturbed Lagrangian matches the symbolic N") {
    const double eps = 0.1;
    auto L = [eps](std::span<const HyperDual> x, std::span<const HyperDual> y) {
      return (1.0 + eps * sin(x[0])) * y[0] * y[0] + y[1] * y[1];
    };
    const ChartSpec cw = lagrange_window(16);
    const LagrangeModel m = lagrange_geometrize(L, cw);
    std::vector<double> u(4);
    double worst = 0.0;
    for (std::size_t node = 0; node < cw.nodes(); ++node) {
      node_coordinates(cw, node, u);
      const double n11 = eps * u[2] * std::cos(u[0]) / (2 * (1 + eps * std::sin(u[0])));
      worst = std::max({worst, std::abs(m.N.N(node, 0) - n11), std::abs(m.N.N(node, 1)), std::abs(m.N.N(node, 2)),
                        std::abs(m.N.N(node, 3))});
    }
    CHECK(worst < 1e-10);
    // N = dG/dy agrees with stencil derivatives of the sampled spray
    const GridField dG = partial_derivative(m.G, 2, kOrder2);
    GridField diff = GridField::scalar(cw);
    for (std::size_t node = 0; node < cw.nodes(); ++node) diff(node) = dG(node, 0) - m.N.N(node, 0);
    CHECK(max_abs_interior(diff, std::vector<int>{0, 0, 1, 1}) < 1e-10);
  }
  SUBCASE("degenerate Hessian is rejected") {
    auto L = [](std::span<const HyperDual>, std::span<const HyperDual> y) { return y[0] * y[0]; };
    CHECK_THROWS_AS(lagrange_geometrize(L, c), InvalidInput);
  }
  SUBCASE("free-particle thermodynamics uses the flat closed forms") {
    const LagrangeModel m = lagrange_geometrize(free_particle, c);
    const double tau = 0.5;
    GridField f = normalize_mu(GridField::scalar(c), tau, m.sasaki);
    const ThermoReport t = lagrange_thermodynamics(m, f, tau, kOrder2);
    CHECK(std::abs(t.energy - tau * 2.0) < 1e-8);
    CHECK(std::abs(t.entropy - (-f(0) + 4.0)) < 1e-8);
    CHECK(std::abs(t.fluctuation - 2.0 * tau * tau) < 1e-8);
  }
}
