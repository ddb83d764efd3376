// Acceptance runner. `acceptance N` checks criterion N and prints one line;
// `acceptance` with no argument checks all of them.
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nhflow/catalog.hpp"
#include "nhflow/cli.hpp"
#include "nhflow/connections.hpp"
#include "nhflow/flow.hpp"
#include "nhflow/functionals.hpp"
#include "../test_helpers.hpp"

using namespace nhflow;
namespace fs = std::filesystem;

namespace {

fs::path config_dir = NHFLOW_ACCEPTANCE_CONFIGS;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ChartSpec torus(int n, int m, int res) {
  return make_chart(n, m, std::vector<double>(n + m, 2 * M_PI), std::vector<int>(n + m, res));
}

double order_of(double coarse, double fine) { return std::log2(coarse / fine); }

struct ConfigRun {
  int status;
  std::map<std::string, double> rec;
  std::string out, err;
};

// Runs an acceptance config through the CLI entry point and reads back the
// printed record.
ConfigRun run_config(const std::string& name, const cli::Overrides& ov = {}, const std::string& output = "") {
  std::ostringstream out, err;
  const int status = cli::run_file((config_dir / name).string(), output, ov, out, err);
  ConfigRun r{status, {}, out.str(), err.str()};
  std::istringstream lines(r.out);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::string key, value, extra;
    if (ls >> key >> value && !(ls >> extra) && key != "check") r.rec[key] = std::stod(value);
  }
  return r;
}

// 2+2 blocks dx^2 + cos^2(x/2) dx2^2 and dy^2 + cosh^2(y/2) dy2^2, Einstein
// with constants 1/4 and -1/4.
struct Warped {
  ChartSpec chart = make_chart(2, 2, {1.0, 2 * M_PI, 1.0, 2 * M_PI}, {16, 8, 16, 8}, {-0.5, 0.0, -0.5, 0.0});
  DMetricField d0 = DMetricField::identity(chart);
  std::vector<int> margin{4, 0, 4, 0};

  Warped() {
    std::vector<double> u(4);
    for (std::size_t node = 0; node < chart.nodes(); ++node) {
      node_coordinates(chart, node, u);
      d0.h(node, 3) = std::pow(std::cos(u[0] / 2), 2);
      d0.v(node, 3) = std::pow(std::cosh(u[2] / 2), 2);
    }
  }
};

Outcome flat_fixed_point() {
  const ChartSpec c = torus(2, 2, 8);
  const FlowState s = FlowState::from(DMetricField::identity(c), NConnectionField::zero(c));
  FlowConfig cfg;
  cfg.dt = 1e-3;
  cfg.steps = 1000;
  const FlowState out = run_flow(s, cfg, Stepper::NAdapted);
  const double drift = std::max(max_abs_diff(out.d.h, s.d.h), max_abs_diff(out.d.v, s.d.v));
  return {drift < 1e-10, fmt("flat 2+2, RK4 dt 1e-3 x 1000: max drift %.3e", drift)};
}

Outcome homothetic_tracking() {
  const Warped w;
  const double hl = 0.25, vl = -0.25;
  FlowConfig cfg;
  cfg.stencil = StencilConfig{4};
  cfg.dt = 1e-3;
  cfg.steps = 1000;
  cfg.boundary = [&](FlowState& s) {
    const HomotheticFactors r = homothetic_reference(s.chi, hl, vl);
    for (std::size_t node = 0; node < w.chart.nodes(); ++node) {
      if (is_interior(w.chart, node, w.margin)) continue;
      for (int q = 0; q < 4; ++q) {
        s.d.h(node, q) = r.rho_h2 * w.d0.h(node, q);
        s.d.v(node, q) = r.rho_v2 * w.d0.v(node, q);
      }
    }
  };
  const FlowState out = run_flow(FlowState::from(w.d0, NConnectionField::zero(w.chart)), cfg, Stepper::NAdapted);
  const HomotheticFactors r = homothetic_reference(out.chi, hl, vl);
  double err = 0.0, h_scale = 0.0, v_scale = 0.0;
  for (std::size_t node = 0; node < w.chart.nodes(); ++node) {
    if (!is_interior(w.chart, node, w.margin)) continue;
    for (int q : {0, 3}) {
      const double sh = out.d.h(node, q) / w.d0.h(node, q), sv = out.d.v(node, q) / w.d0.v(node, q);
      err = std::max({err, std::abs(sh / r.rho_h2 - 1.0), std::abs(sv / r.rho_v2 - 1.0)});
      h_scale = sh;
      v_scale = sv;
    }
  }
  return {err < 1e-6, fmt("chi %.6f: h scale %.9f, v scale %.9f, max relative error %.3e", out.chi, h_scale, v_scale, err)};
}

Outcome metric_compatibility() {
  const StencilConfig cfg{2};
  std::vector<double> res_err, C;
  for (int res : {16, 32, 64}) {
    const ChartSpec c = torus(2, 1, res);
    DMetricField d = DMetricField::identity(c);
    AdaptedMetricDerivatives dg{GridField(c, {Slot::H, Slot::H, Slot::A}), GridField(c, {Slot::V, Slot::V, Slot::A})};
    std::vector<double> u(3);
    for (std::size_t node = 0; node < c.nodes(); ++node) {
      node_coordinates(c, node, u);
      const double e = std::exp(0.6 * std::sin(u[0]) * std::sin(u[1]));
      for (int r : {0, 3}) {
        d.h(node, r) = e;
        dg.h(node, r * 3 + 0) = 0.6 * std::cos(u[0]) * std::sin(u[1]) * e;
        dg.h(node, r * 3 + 1) = 0.6 * std::sin(u[0]) * std::cos(u[1]) * e;
      }
    }
    const DConnectionCoeffs dc = canonical_dconnection(d, NConnectionField::zero(c), cfg);
    res_err.push_back(compatibility_residual(dc, d, dg));
    C.push_back(res_err.back() / std::pow(c.spacing(0), 2));
  }
  const double p1 = order_of(res_err[0], res_err[1]), p2 = order_of(res_err[1], res_err[2]);
  // C fixed on the coarsest chart
  const double C0 = 1.5 * C[0];
  const bool bounded = C[1] < C0 && C[2] < C0;
  return {p1 >= 1.9 && p2 >= 1.9 && bounded,
          fmt("residual %.3e / %.3e / %.3e, order %.3f %.3f, residual / h^2 = %.3f %.3f %.3f < %.3f", res_err[0], res_err[1], res_err[2], p1,
              p2, C[0], C[1], C[2], C0)};
}

Outcome torsion_constraints() {
  std::mt19937_64 rng(7001);
  double worst = 0.0;
  int trials = 0;
  for (auto [n, m] : {std::pair{2, 2}, std::pair{2, 1}, std::pair{3, 2}}) {
    for (int t = 0; t < 4; ++t, ++trials) {
      const ChartSpec c = torus(n, m, 8);
      const DMetricField d = testing::random_dmetric(rng, c, 0.1);
      const NConnectionField nc = testing::random_nconnection(rng, c, 0.4);
      for (int order : {2, 4}) {
        const StencilConfig cfg{order};
        const TorsionField tf = torsion(canonical_dconnection(d, nc, cfg), nc, cfg);
        worst = std::max({worst, max_abs(tf.T_ijk), max_abs(tf.T_bca)});
      }
    }
  }
  return {worst == 0.0, fmt("%d random states, orders 2 and 4: max |T_ijk|, |T_bca| = %g", trials, worst)};
}

Outcome distorsion_identity() {
  std::mt19937_64 rng(7002);
  const StencilConfig cfg{2};
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const ChartSpec c = torus(2, trial % 2 ? 1 : 2, 8);
    const DMetricField d = testing::random_dmetric(rng, c, 0.1);
    const NConnectionField nc = testing::random_nconnection(rng, c, 0.4);
    const DConnectionCoeffs dc = canonical_dconnection(d, nc, cfg);
    const GridField lc = levi_civita_adapted(levi_civita(assemble_full_metric(d, nc), cfg), nc, cfg);
    worst = std::max(worst, max_abs_diff(reconstruct_levi_civita(dc, distorsion(lc, dc)), lc));
  }
  return {worst < 1e-12, fmt("20 random metrics: max |Gamma_LC - (Gamma + Z)| = %.3e", worst)};
}

Outcome pp_wave_vacuum() {
  std::vector<double> r;
  for (int res : {16, 32, 64}) {
    cli::Overrides ov;
    ov.resolution = res;
    const ConfigRun run = run_config("pp_wave_verify.json", ov);
    if (!run.rec.count("ricci_max")) return {false, "pp-wave run produced no ricci_max: " + run.err};
    r.push_back(run.rec.at("ricci_max"));
  }
  const double p1 = order_of(r[0], r[1]), p2 = order_of(r[1], r[2]);
  return {p1 >= 1.9 && p2 >= 1.9 && r[2] < 1e-3,
          fmt("max |Ricci| at 16/32/64: %.4g / %.4g / %.4g, order %.3f %.3f", r[0], r[1], r[2], p1, p2)};
}

// h depends on x, v on y, N = 0
struct Product {
  ChartSpec chart;
  DMetricField d;
  NConnectionField nc;
  explicit Product(int res) : chart(torus(2, 2, res)), d(DMetricField::identity(chart)), nc(NConnectionField::zero(chart)) {
    std::vector<double> u(4);
    for (std::size_t node = 0; node < chart.nodes(); ++node) {
      node_coordinates(chart, node, u);
      d.h(node, 0) = 1.0 + 0.2 * std::sin(u[0]) * std::cos(u[1]);
      d.h(node, 1) = d.h(node, 2) = 0.1 * std::sin(u[0] + u[1]);
      d.h(node, 3) = 1.0 + 0.15 * std::cos(u[0]);
      d.v(node, 0) = 1.0 + 0.2 * std::cos(u[2] - u[3]);
      d.v(node, 3) = std::exp(0.3 * std::sin(u[2]));
    }
  }
};

Outcome variation_formula() {
  const StencilConfig cfg{4};
  const Product p(16);
  const ChartSpec& c = p.chart;
  const GridField f = make_grid(c, [](std::span<const double> u) { return 0.3 * std::sin(u[0]) * std::cos(u[3]) + 0.2 * std::cos(u[2]); });
  VariationSpec var{GridField(c, {Slot::H, Slot::H}), GridField(c, {Slot::V, Slot::V}), GridField::scalar(c),
                    GridField::scalar(c)};
  std::vector<double> u(4);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    node_coordinates(c, node, u);
    var.vh(node, 0) = std::cos(u[0]);
    var.vh(node, 1) = var.vh(node, 2) = 0.5 * std::sin(u[1]);
    var.vh(node, 3) = std::sin(u[0] + u[1]);
    var.vv(node, 0) = std::sin(u[2]);
    var.vv(node, 3) = 0.5 * std::cos(u[3]);
    var.hf(node) = std::cos(u[0] - u[1]);
    var.vf(node) = 0.7 * std::sin(u[3]);
  }
  auto F_at = [&](double eps) {
    DMetricField d = p.d;
    GridField g = f;
    for (std::size_t q = 0; q < d.h.values().size(); ++q) d.h.values()[q] += eps * var.vh.values()[q];
    for (std::size_t q = 0; q < d.v.values().size(); ++q) d.v.values()[q] += eps * var.vv.values()[q];
    for (std::size_t node = 0; node < c.nodes(); ++node) g(node) += eps * (var.hf(node) + var.vf(node));
    return f_functional(d, p.nc, g, cfg).F;
  };
  auto fd = [&](double eps) { return (F_at(eps) - F_at(-eps)) / (2 * eps); };
  const double analytic = first_variation_F(p.d, p.nc, f, var, cfg);
  const double d3 = fd(1e-3), d4 = fd(1e-4), d5 = fd(1e-5);
  // successive differences shrink by 100 under O(eps^2) truncation
  const double ratio = std::abs(d3 - d4) / std::abs(d4 - d5);
  const double rel = std::abs(analytic - d4) / std::abs(d4);
  return {ratio > 50.0 && ratio < 200.0 && rel < 1e-3,
          fmt("analytic %.10f, fd(1e-4) %.10f, relative %.3e, difference ratio %.1f", analytic, d4, rel, ratio)};
}

// perturbed flat 2+1 state with a smooth potential
FlowState perturbed(int res, GridField& f) {
  const ChartSpec c = torus(2, 1, res);
  DMetricField d = DMetricField::identity(c);
  f = GridField::scalar(c);
  std::vector<double> u(3);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    node_coordinates(c, node, u);
    const double e = std::exp(0.2 * std::sin(u[0]) * std::cos(u[1]));
    d.h(node, 0) = d.h(node, 3) = e;
    d.v(node, 0) = 1.0 + 0.1 * std::sin(u[2]);
    f(node) = 0.2 * std::cos(u[0]) + 0.1 * std::sin(u[2]);
  }
  return FlowState::from(d, NConnectionField::zero(c), 2.0);
}

Outcome monotonicity() {
  GridField f;
  const FlowState s = perturbed(16, f);
  FlowConfig cfg;
  cfg.stencil = StencilConfig{4};
  cfg.dt = 0.02;
  cfg.steps = 25;
  cfg.time_term = PotentialTimeTerm::None;
  const std::vector<FlowState> tr = coupled_trajectory(s, f, cfg, true);
  double min_rate = 1e300, worst_rel = 0.0, F_prev = 0.0, g_prev = 0.0;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const FlowState& x = tr[k];
    const double F = f_functional(x.d, x.nc, x.f, cfg.stencil).F;
    const double g = f_gradient_rate(x.d, x.nc, x.f, cfg.stencil);
    if (k > 0) {
      const double rate = (F - F_prev) / cfg.dt;
      min_rate = std::min(min_rate, rate);
      worst_rel = std::max(worst_rel, std::abs(rate / (0.5 * (g + g_prev)) - 1.0));
    }
    F_prev = F;
    g_prev = g;
  }
  return {min_rate >= -1e-8 && worst_rel < 0.02,
          fmt("25 steps of dt 0.02: min dF/dchi %.4e, max relative gap to the gradient integral %.3e", min_rate,
              worst_rel)};
}

Outcome conservation() {
  GridField f;
  const FlowState s = perturbed(24, f);
  FlowConfig cfg;
  cfg.stencil = StencilConfig{4};
  cfg.dt = 0.01;
  cfg.steps = 100;
  cfg.time_term = PotentialTimeTerm::Conserving;
  const std::vector<FlowState> tr = coupled_trajectory(s, f, cfg, true);
  double drift = 0.0;
  for (const FlowState& x : tr) drift = std::max(drift, std::abs(mu_integral(x.f, x.tau, x.d) - 1.0));
  return {drift < 1e-6, fmt("chi 0 to %.2f: max |int mu dV - 1| = %.3e", tr.back().chi, drift)};
}

Outcome d_energy_checks() {
  const StencilConfig cfg{4};
  const ChartSpec c = torus(2, 1, 8);
  const DEnergy flat = d_energy(DMetricField::identity(c), NConnectionField::zero(c), cfg);
  DEnergyOptions opt;
  opt.h_potential = make_grid(c, [](std::span<const double>) { return 0.35; });
  opt.v_potential = make_grid(c, [](std::span<const double>) { return 0.4; });
  const DEnergy shifted = d_energy(DMetricField::identity(c), NConnectionField::zero(c), cfg, opt);
  const Product p(8);
  const DEnergy split = d_energy(p.d, p.nc, cfg);
  const double e1 = std::abs(flat.lambda), e2 = std::abs(shifted.lambda - 0.75),
               e3 = std::abs(split.lambda - (split.h_lambda + split.v_lambda));
  return {e1 < 1e-8 && e2 < 1e-8 && e3 < 1e-8,
          fmt("flat %.3e, shift 0.75 error %.3e, split %.6f vs %.6f + %.6f error %.3e", e1, e2, split.lambda,
              split.h_lambda, split.v_lambda, e3)};
}

Outcome thermodynamics_checks() {
  const StencilConfig cfg{4};
  const ChartSpec c = torus(2, 2, 8);
  const DMetricField d = DMetricField::identity(c);
  const double tau = 0.7, D = 4.0;
  const GridField f = normalize_mu(GridField::scalar(c), tau, d);
  const double cst = f(0);
  const ThermoReport t = thermodynamics(d, NConnectionField::zero(c), f, tau, cfg);
  const double err = std::max({std::abs(t.energy - tau * D / 2), std::abs(t.entropy - (D - cst)),
                               std::abs(t.fluctuation - D * tau * tau / 2)});
  std::mt19937_64 rng(7011);
  std::uniform_real_distribution<double> td(0.2, 3.0);
  double sigma_min = 1e300;
  for (int trial = 0; trial < 10; ++trial) {
    const ChartSpec cc = torus(2, 1 + trial % 2, 8);
    const DMetricField dd = testing::random_dmetric(rng, cc, 0.08);
    const NConnectionField nc = testing::random_nconnection(rng, cc, 0.08);
    const testing::RandomModes modes(rng, cc.dim(), 3, 0.5);
    const double tt = td(rng);
    const GridField g = normalize_mu(make_grid(cc, [&](std::span<const double> u) { return modes(cc, u); }), tt, dd);
    sigma_min = std::min(sigma_min, thermodynamics(dd, nc, g, tt, cfg).fluctuation);
  }
  return {err < 1e-8 && sigma_min >= 0.0,
          fmt("flat closed forms max error %.3e; min fluctuation over 10 fuzzed states %.4e", err, sigma_min)};
}

Outcome sine_gordon() {
  const ConfigRun r = run_config("sine_gordon_verify.json");
  const double n = r.rec.count("samples") ? r.rec.at("samples") : 0.0;
  const double res = r.rec.count("residual_max") ? r.rec.at("residual_max") : INFINITY;
  return {r.status == 0 && n >= 1000 && res < 1e-12, fmt("%.0f samples: max |q'' - sin q| = %.3e", n, res)};
}

Outcome solitonic_4d() {
  const char* lines[] = {"psi_line", "phi_line", "w_line", "n_line"};
  std::map<std::string, double> at[2];
  for (int r : {0, 1}) {
    cli::Overrides ov;
    ov.resolution = 32 << r;
    const ConfigRun run = run_config("solitonic4d_verify.json", ov);
    for (const char* k : lines)
      if (!run.rec.count(k)) return {false, "solitonic run produced no " + std::string(k) + ": " + run.err};
    at[r] = run.rec;
  }
  bool ok = true;
  std::string detail;
  for (const char* k : lines) {
    const double p = order_of(at[0][k], at[1][k]);
    ok = ok && at[1][k] < 1e-3 && p >= 1.9;
    detail += fmt("%s %.3e (order %.2f) ", k, at[1][k], p);
  }
  return {ok, detail + "at 64"};
}

Outcome lagrange() {
  ConfigRun free = run_config("lagrange_verify.json");
  const double flat = std::max({free.rec["spray_max"], free.rec["N_max"], free.rec["connection_max"]});
  const double eps = 0.1;
  auto L = [eps](std::span<const HyperDual> x, std::span<const HyperDual> y) {
    return (1.0 + eps * sin(x[0])) * y[0] * y[0] + y[1] * y[1];
  };
  const ChartSpec c = make_chart(2, 2, {1.0, 1.0, 1.0, 1.0}, {16, 16, 16, 16}, {0.0, 0.0, 0.5, -0.5});
  const LagrangeModel m = lagrange_geometrize(L, c);
  std::vector<double> u(4);
  double worst = 0.0;
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    node_coordinates(c, node, u);
    const double n11 = eps * u[2] * std::cos(u[0]) / (2 * (1 + eps * std::sin(u[0])));
    worst = std::max(worst, std::abs(m.N.N(node, 0) - n11));
  }
  return {free.status == 0 && flat < 1e-12 && worst < 1e-10,
          fmt("free particle max coefficient %.3e; perturbed N_1^1 vs symbolic %.3e", flat, worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path tmp = fs::temp_directory_path() / ("nhflow_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(tmp);
  std::vector<std::string> configs;
  for (const auto& e : fs::directory_iterator(config_dir))
    if (e.path().extension() == ".json") configs.push_back(e.path().filename().string());
  std::sort(configs.begin(), configs.end());
  int compared = 0;
  std::string bad;
  for (const std::string& name : configs) {
    const std::string stem = fs::path(name).stem().string();
    const ConfigRun a = run_config(name, {}, (tmp / ("a_" + stem)).string());
    const ConfigRun b = run_config(name, {}, (tmp / ("b_" + stem)).string());
    bool same = a.status == b.status && a.out == b.out;
    const fs::path csv_a = tmp / ("a_" + stem + ".csv"), csv_b = tmp / ("b_" + stem + ".csv");
    if (fs::exists(csv_a) || fs::exists(csv_b)) {
      same = same && fs::exists(csv_a) && fs::exists(csv_b) && slurp(csv_a) == slurp(csv_b);
      ++compared;
    }
    if (!same) bad += " " + name;
  }
  fs::remove_all(tmp);
  if (!bad.empty()) return {false, "differing output:" + bad};
  return {compared == static_cast<int>(configs.size()),
          fmt("%zu configs run twice, %d CSV pairs byte-identical", configs.size(), compared)};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> check;
};

const std::vector<Criterion> criteria = {
    {"flat fixed point", flat_fixed_point},
    {"homothetic tracking", homothetic_tracking},
    {"metric compatibility", metric_compatibility},
    {"torsion constraints", torsion_constraints},
    {"distorsion identity", distorsion_identity},
    {"pp-wave vacuum", pp_wave_vacuum},
    {"variation formula", variation_formula},
    {"monotonicity", monotonicity},
    {"conservation", conservation},
    {"d-energy", d_energy_checks},
    {"thermodynamics", thermodynamics_checks},
    {"sine-Gordon", sine_gordon},
    {"solitonic 4d constraints", solitonic_4d},
    {"Lagrange geometrization", lagrange},
    {"CLI determinism", determinism},
};

bool report(int k) {
  const Criterion& c = criteria[k - 1];
  Outcome o;
  try {
    o = c.check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s criterion %2d (%s): %s\n", o.pass ? "PASS" : "FAIL", k, c.name, o.detail.c_str());
  std::fflush(stdout);
  return o.pass;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 2) config_dir = argv[2];
  if (argc > 1) {
    const int k = std::atoi(argv[1]);
    if (k < 1 || k > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "usage: acceptance [1-%zu] [config_dir]\n", criteria.size());
      return 2;
    }
    return report(k) ? 0 : 1;
  }
  int failed = 0;
  for (int k = 1; k <= static_cast<int>(criteria.size()); ++k) failed += !report(k);
  return failed ? 1 : 0;
}
