#include "nhflow/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "nhflow/catalog.hpp"
#include "nhflow/errors.hpp"
#include "nhflow/expr.hpp"
#include "nhflow/flow.hpp"

namespace nhflow::cli {

using json = nlohmann::json;

struct Document {
  json root;
};

ConfigError::ConfigError(std::string location, const std::string& what)
    : std::runtime_error(what), location_(std::move(location)) {}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

const char* command_name(Command c) {
  switch (c) {
    case Command::Verify: return "verify";
    case Command::Flow: return "flow";
    case Command::Functional: return "functional";
    case Command::Thermo: return "thermo";
    case Command::Catalog: return "catalog";
    case Command::DEnergy: return "d-energy";
  }
  return "?";
}

namespace {

// A JSON value together with its pointer, so errors can say where they are.
struct Node {
  const json* j;
  std::string path;

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(path.empty() ? "/" : path, what); }

  bool has(const std::string& key) const { return j->is_object() && j->contains(key); }

  Node at(const std::string& key) const {
    if (!j->is_object()) fail("expected an object");
    auto it = j->find(key);
    if (it == j->end()) throw ConfigError(path + "/" + key, "missing key '" + key + "'");
    return {&*it, path + "/" + key};
  }
  Node at(std::size_t k) const {
    if (!j->is_array() || k >= j->size()) fail("expected an array with at least " + std::to_string(k + 1) + " entries");
    return {&(*j)[k], path + "/" + std::to_string(k)};
  }
  std::size_t size() const {
    if (!j->is_array()) fail("expected an array");
    return j->size();
  }

  double number() const {
    if (!j->is_number()) fail("expected a number");
    return j->get<double>();
  }
  int integer() const {
    if (!j->is_number_integer()) fail("expected an integer");
    return j->get<int>();
  }
  bool boolean() const {
    if (!j->is_boolean()) fail("expected true or false");
    return j->get<bool>();
  }
  std::string string() const {
    if (!j->is_string()) fail("expected a string");
    return j->get<std::string>();
  }

  double number(const std::string& key, double dflt) const { return has(key) ? at(key).number() : dflt; }
  int integer(const std::string& key, int dflt) const { return has(key) ? at(key).integer() : dflt; }
  bool boolean(const std::string& key, bool dflt) const { return has(key) ? at(key).boolean() : dflt; }
  std::string string(const std::string& key, const std::string& dflt) const {
    return has(key) ? at(key).string() : dflt;
  }

  std::vector<double> numbers() const {
    std::vector<double> out(size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = at(k).number();
    return out;
  }
  std::vector<int> integers() const {
    std::vector<int> out(size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = at(k).integer();
    return out;
  }

  // A number or a closed-form string in the given variables.
  Expression expression(const std::vector<std::string>& vars) const {
    if (j->is_number()) return Expression::constant(j->get<double>());
    if (!j->is_string()) fail("expected a number or an expression string");
    try {
      return Expression::parse(j->get<std::string>(), vars);
    } catch (const InvalidInput& e) {
      fail(e.what());
    }
  }
};

template <class E>
E pick(const Node& nd, const std::map<std::string, E>& options) {
  const std::string s = nd.string();
  auto it = options.find(s);
  if (it == options.end()) {
    std::string all;
    for (const auto& [k, v] : options) all += (all.empty() ? "" : ", ") + k;
    nd.fail("unknown value '" + s + "' (expected one of " + all + ")");
  }
  return it->second;
}

Node root(const RunConfig& cfg) { return {&cfg.doc->root, ""}; }

Fn1 fn1(const Node& nd, const std::string& var) {
  Expression e = nd.expression({var});
  return [e](double a) { return e({a}); };
}
Fn2 fn2(const Node& nd, const std::string& a, const std::string& b) {
  Expression e = nd.expression({a, b});
  return [e](double x, double y) { return e({x, y}); };
}
Fn3 fn3(const Node& nd, const std::string& a, const std::string& b, const std::string& c) {
  Expression e = nd.expression({a, b, c});
  return [e](double x, double y, double z) { return e({x, y, z}); };
}

// Margin in nodes: "margin": [k...] or "margin_fraction": f (floor(f * res) per axis).
std::vector<int> margin_of(const Node& nd, const ChartSpec& c, int fallback) {
  const int D = c.dim();
  if (nd.has("margin")) {
    std::vector<int> m = nd.at("margin").integers();
    if (static_cast<int>(m.size()) != D) nd.at("margin").fail("margin needs one entry per axis");
    for (int k : m)
      if (k < 0) nd.at("margin").fail("margin entries must be non-negative");
    return m;
  }
  if (nd.has("margin_fraction")) {
    const double f = nd.at("margin_fraction").number();
    if (!(f >= 0.0 && f < 0.5)) nd.at("margin_fraction").fail("margin_fraction must lie in [0, 0.5)");
    std::vector<int> m(static_cast<std::size_t>(D));
    for (int a = 0; a < D; ++a) m[a] = static_cast<int>(std::floor(f * c.resolution[a]));
    return m;
  }
  return std::vector<int>(static_cast<std::size_t>(D), fallback);
}

// ---- metric sources ---------------------------------------------------------

struct Geometry {
  DMetricField d;
  NConnectionField nc;
  std::optional<LagrangeModel> lagrange;
};

GridField block_from(const Node& nd, const RunConfig& cfg, Slot s) {
  const ChartSpec& c = cfg.chart;
  const int k = s == Slot::H ? c.n : c.m;
  if (nd.size() != static_cast<std::size_t>(k)) nd.fail("block needs " + std::to_string(k) + " rows");
  std::vector<Expression> e;
  for (int p = 0; p < k; ++p) {
    Node row = nd.at(static_cast<std::size_t>(p));
    if (row.size() != static_cast<std::size_t>(k)) row.fail("row needs " + std::to_string(k) + " entries");
    for (int q = 0; q < k; ++q) e.push_back(row.at(static_cast<std::size_t>(q)).expression(cfg.names));
  }
  return make_grid(c, {s, s}, [&](std::span<const double> u, std::span<double> out) {
    for (std::size_t q = 0; q < e.size(); ++q) out[q] = e[q](u);
  });
}

Geometry geometry_of(const RunConfig& cfg) {
  const ChartSpec& c = cfg.chart;
  const Node m = root(cfg).at("metric");
  Geometry g;
  if (m.has("lagrangian")) {
    if (c.n != c.m) m.fail("a Lagrangian needs n = m");
    std::vector<std::string> vars(cfg.names);
    const Expression L = m.at("lagrangian").expression(vars);
    const std::size_t n = static_cast<std::size_t>(c.n);
    LagrangianFn fn = [L, n](std::span<const HyperDual> x, std::span<const HyperDual> y) {
      std::vector<HyperDual> u(x.begin(), x.end());
      u.insert(u.end(), y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n));
      return L.eval<HyperDual>(u);
    };
    try {
      g.lagrange = lagrange_geometrize(fn, c, m.number("fd_step", 1e-3));
    } catch (const InvalidInput& e) {
      m.fail(e.what());
    }
    g.d = g.lagrange->sasaki;
    g.nc = g.lagrange->N;
    return g;
  }
  g.d = DMetricField::identity(c);
  if (m.has("h")) g.d.h = block_from(m.at("h"), cfg, Slot::H);
  if (m.has("v")) g.d.v = block_from(m.at("v"), cfg, Slot::V);
  if (m.has("signature")) {
    g.d.signature = m.at("signature").integers();
    if (static_cast<int>(g.d.signature.size()) != c.dim()) m.at("signature").fail("signature needs one sign per axis");
  }
  g.nc = NConnectionField::zero(c);
  if (m.has("N")) {
    const Node N = m.at("N");
    if (N.size() != static_cast<std::size_t>(c.n)) N.fail("N needs n rows");
    std::vector<Expression> e;
    for (int i = 0; i < c.n; ++i) {
      Node row = N.at(static_cast<std::size_t>(i));
      if (row.size() != static_cast<std::size_t>(c.m)) row.fail("N rows need m entries");
      for (int a = 0; a < c.m; ++a) e.push_back(row.at(static_cast<std::size_t>(a)).expression(cfg.names));
    }
    g.nc.N = make_grid(c, {Slot::H, Slot::V}, [&](std::span<const double> u, std::span<double> out) {
      for (std::size_t q = 0; q < e.size(); ++q) out[q] = e[q](u);
    });
  }
  try {
    g.d.validate();
  } catch (const InvalidInput& e) {
    m.fail(e.what());
  }
  return g;
}

GridField potential_of(const RunConfig& cfg, const DMetricField& d, double tau) {
  const Node r = root(cfg);
  GridField f = GridField::scalar(cfg.chart);
  if (r.has("potential")) {
    const Expression e = r.at("potential").expression(cfg.names);
    f = make_grid(cfg.chart, [&](std::span<const double> u) { return e(u); });
  }
  if (r.boolean("normalize", false)) f = normalize_mu(f, tau, d);
  return f;
}

// ---- output -------------------------------------------------------------------

void print_record(std::ostream& out, const Record& rec) {
  std::size_t w = 0;
  for (const auto& [k, v] : rec) w = std::max(w, k.size());
  for (const auto& [k, v] : rec) out << k << std::string(w + 2 - k.size(), ' ') << format_double(v) << "\n";
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("--out", "cannot write " + path);
  f << body;
}

std::string record_csv(const Record& rec) {
  std::string s = "quantity,value\n";
  for (const auto& [k, v] : rec) s += k + "," + format_double(v) + "\n";
  return s;
}

json chart_json(const ChartSpec& c) {
  json j;
  j["n"] = c.n;
  j["m"] = c.m;
  j["extents"] = c.extents;
  j["resolution"] = c.resolution;
  j["origin"] = c.origin.empty() ? std::vector<double>(static_cast<std::size_t>(c.dim()), 0.0) : c.origin;
  return j;
}

std::vector<double> flat(const GridField& f) { return {f.values().begin(), f.values().end()}; }

// Snapshot fields: chart, signature, chi, tau, h, v, N, f. Arrays are node-major
// with the per-node components row-major.
void write_snapshot(const std::string& path, const DMetricField& d, const NConnectionField& nc, const GridField* f,
                    double chi, double tau) {
  json j;
  j["chart"] = chart_json(d.chart());
  j["signature"] = d.signature;
  j["chi"] = chi;
  j["tau"] = tau;
  j["h"] = flat(d.h);
  j["v"] = flat(d.v);
  j["N"] = flat(nc.N);
  if (f) j["f"] = flat(*f);
  write_text(path, j.dump(1) + "\n");
}

// ---- checks ---------------------------------------------------------------------

// "checks": {"name": {"max": a} | {"min": a} | {"value": v, "tol": t}}
int apply_checks(const RunConfig& cfg, const Record& rec, std::ostream& out, std::ostream& err) {
  const Node r = root(cfg);
  if (!r.has("checks")) return 0;
  const Node checks = r.at("checks");
  if (!checks.j->is_object()) checks.fail("expected an object");
  std::map<std::string, double> by_name(rec.begin(), rec.end());
  int failed = 0;
  for (auto it = checks.j->begin(); it != checks.j->end(); ++it) {
    const Node c{&it.value(), checks.path + "/" + it.key()};
    auto found = by_name.find(it.key());
    if (found == by_name.end()) c.fail("no quantity named '" + it.key() + "' in this run");
    const double x = found->second;
    bool ok = std::isfinite(x);
    std::string rule;
    if (c.has("max")) {
      ok = ok && x <= c.at("max").number();
      rule = "<= " + format_double(c.at("max").number());
    } else if (c.has("min")) {
      ok = ok && x >= c.at("min").number();
      rule = ">= " + format_double(c.at("min").number());
    } else if (c.has("value")) {
      const double v = c.at("value").number(), t = c.at("tol").number();
      ok = ok && std::abs(x - v) <= t;
      rule = "= " + format_double(v) + " +- " + format_double(t);
    } else {
      c.fail("a check needs max, min, or value with tol");
    }
    out << "check " << it.key() << " " << (ok ? "ok" : "FAILED") << "\n";
    if (!ok) {
      err << "check failed: " << it.key() << " = " << format_double(x) << " (expected " << rule << ")\n";
      ++failed;
    }
  }
  return failed ? 1 : 0;
}

// ---- commands -------------------------------------------------------------------

Record verify_catalog(const RunConfig& cfg, std::optional<Geometry>* built) {
  const Node cat = root(cfg).at("catalog");
  const std::string kind = cat.at("kind").string();
  const ChartSpec& c = cfg.chart;
  Record rec;
  if (kind == "pp-wave") {
    PPWaveSpec spec;
    spec.kind = pick<PPWaveSpec::Kind>(cat.at("profile"), {{"monochromatic", PPWaveSpec::Kind::Monochromatic},
                                                            {"packet", PPWaveSpec::Kind::Packet},
                                                            {"custom", PPWaveSpec::Kind::Custom}});
    if (spec.kind == PPWaveSpec::Kind::Custom) spec.kappa = fn3(cat.at("kappa"), "x", "y", "p");
    spec.p0 = cat.number("p0", 1.0);
    spec.eps1 = cat.integer("eps1", -1);
    const PPWaveKappa k = pp_wave_kappa(spec, c, cfg.stencil);
    const FullMetricField g = build_pp_wave_5d(spec, c);
    const std::vector<int> margin = margin_of(cat, c, 2 * cfg.stencil.reach());
    rec.emplace_back("harmonicity", k.harmonicity);
    rec.emplace_back("ricci_max", metric_ricci_residual(g, cfg.stencil, margin));
    if (built) {
      auto [d, nc] = split_full_metric(g);
      *built = Geometry{std::move(d), std::move(nc), std::nullopt};
    }
  } else if (kind == "sine-gordon") {
    const int samples = cat.integer("samples", 1000);
    const double lo = cat.number("p_min", -10.0), hi = cat.number("p_max", 10.0);
    const int sign = cat.integer("sign", 1);
    if (samples < 2) cat.at("samples").fail("need at least two samples");
    double worst = 0.0;
    for (int k = 0; k < samples; ++k) worst = std::max(worst, sine_gordon_residual(lo + (hi - lo) * k / (samples - 1), sign));
    rec.emplace_back("samples", samples);
    rec.emplace_back("residual_max", worst);
  } else if (kind == "solitonic-3d") {
    if (c.dim() != 3) root(cfg).at("chart").fail("solitonic-3d needs a chart with axes (x, y, p)");
    const Expression eta = cat.at("eta").expression({"x", "y", "p"});
    const GridField f = make_grid(c, [&](std::span<const double> u) { return eta(u); });
    const std::vector<int> margin = margin_of(cat, c, 4 * cfg.stencil.reach());
    rec.emplace_back("residual", solitonic_residual_3d(f, cat.integer("eps", 1), cfg.stencil, margin));
  } else if (kind == "einstein") {
    EinsteinAnsatzSpec s;
    if (cat.has("eps")) {
      std::vector<int> e = cat.at("eps").integers();
      if (e.size() != 4) cat.at("eps").fail("eps needs four signs");
      std::copy(e.begin(), e.end(), s.eps.begin());
    }
    s.g2 = fn2(cat.at("g2"), "x2", "x3");
    s.g3 = fn2(cat.at("g3"), "x2", "x3");
    s.f = fn3(cat.at("f"), "x2", "x3", "v");
    s.h0 = fn2(cat.at("h0"), "x2", "x3");
    s.f0 = fn2(cat.at("f0"), "x2", "x3");
    s.h_lambda = fn3(cat.at("h_lambda"), "x2", "x3", "v");
    s.v_lambda = fn2(cat.at("v_lambda"), "x2", "x3");
    s.sigma0 = fn2(cat.at("sigma0"), "x2", "x3");
    for (int a = 0; a < 2; ++a) {
      if (cat.has("n1")) s.n1[a] = fn2(cat.at("n1").at(static_cast<std::size_t>(a)), "x2", "x3");
      if (cat.has("n2")) s.n2[a] = fn2(cat.at("n2").at(static_cast<std::size_t>(a)), "x2", "x3");
    }
    const std::vector<int> margin = margin_of(cat, c, 2 * cfg.stencil.reach());
    EinsteinAnsatz e = build_einstein_ansatz(s, c, cfg.stencil, margin);
    rec.emplace_back("h_residual", e.residuals.h);
    rec.emplace_back("v_residual", e.residuals.v);
    rec.emplace_back("hv_residual", e.residuals.hv);
    rec.emplace_back("vh_residual", e.residuals.vh);
    if (built) *built = Geometry{std::move(e.d), std::move(e.nc), std::nullopt};
  } else if (kind == "solitonic-4d") {
    Solitonic4dSpec s;
    s.psi = fn2(cat.at("psi"), "x", "y");
    s.b_breve = fn2(cat.at("b_breve"), "x", "y");
    s.k = fn1(cat.at("k"), "p");
    s.q_sign = cat.integer("q_sign", 1);
    s.h0 = cat.number("h0", 2.0);
    s.lambda = cat.number("lambda", 0.0);
    for (int a = 0; a < 2; ++a) {
      const auto k = static_cast<std::size_t>(a);
      s.sn[k] = fn2(cat.at("sn").at(k), "x", "y");
      if (cat.has("rn")) s.rn[k] = fn1(cat.at("rn").at(k), "chi");
      if (cat.has("rn_rate")) s.rn_rate[k] = fn1(cat.at("rn_rate").at(k), "chi");
    }
    if (cat.has("b_r")) s.b_r = fn1(cat.at("b_r"), "chi");
    const std::vector<int> margin = margin_of(cat, c, 2 * cfg.stencil.reach());
    Solitonic4d r = build_solitonic_4d(s, cat.number("chi", 0.0), c, cfg.stencil, margin);
    rec.emplace_back("psi_line", r.residuals[0]);
    rec.emplace_back("phi_line", r.residuals[1]);
    rec.emplace_back("w_line", r.residuals[2]);
    rec.emplace_back("n_line", r.residuals[3]);
    rec.emplace_back("lambda_relation_2", r.lambda_relation[0]);
    rec.emplace_back("lambda_relation_3", r.lambda_relation[1]);
    if (built) *built = Geometry{std::move(r.d), std::move(r.nc), std::nullopt};
  } else if (kind == "lagrange") {
    Geometry g = geometry_of(cfg);
    if (!g.lagrange) root(cfg).at("metric").fail("lagrange verification needs metric.lagrangian");
    const DConnectionCoeffs dc = canonical_dconnection(g.d, g.nc, cfg.stencil);
    const std::vector<int> margin = margin_of(cat, c, 2 * cfg.stencil.reach());
    double conn = 0.0;
    for (const GridField* f : {&dc.Lh, &dc.Lv, &dc.Ch, &dc.Cv}) conn = std::max(conn, max_abs_interior(*f, margin));
    rec.emplace_back("spray_max", max_abs_interior(g.lagrange->G, margin));
    rec.emplace_back("N_max", max_abs_interior(g.nc.N, margin));
    rec.emplace_back("connection_max", conn);
    if (built) *built = std::move(g);
  } else {
    cat.at("kind").fail("unknown catalog kind '" + kind + "'");
  }
  return rec;
}

double mean_trace_ratio(const GridField& now, const GridField& start, int k, std::span<const int> margin) {
  const ChartSpec& c = now.chart();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    if (!is_interior(c, node, margin)) continue;
    double tn = 0.0, ts = 0.0;
    for (int p = 0; p < k; ++p) {
      tn += now(node, static_cast<std::size_t>(p * k + p));
      ts += start(node, static_cast<std::size_t>(p * k + p));
    }
    sum += tn / ts;
    ++count;
  }
  return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

const char* kFlowHeader =
    "chi,tau,F,W,hR_min,hR_max,vR_min,vR_max,R_ia_max,R_ai_max,det_h_min,det_h_max,det_v_min,det_v_max,"
    "h_trace_ratio,v_trace_ratio\n";

int run_flow_command(const RunConfig& cfg, std::ostream& out, std::ostream& err, Record& rec) {
  const Node r = root(cfg);
  const Node fl = r.at("flow");
  Geometry g = geometry_of(cfg);
  const double tau0 = r.number("tau", 1.0);
  FlowState s = FlowState::from(g.d, g.nc, tau0);
  s.f = potential_of(cfg, g.d, tau0);

  FlowConfig fc;
  fc.stencil = cfg.stencil;
  fc.dt = fl.number("dt", 1e-3);
  fc.steps = cfg.steps ? *cfg.steps : fl.integer("steps", 1);
  fc.lambda = fl.number("lambda", 0.0);
  fc.scheme = fl.has("scheme") ? pick<Scheme>(fl.at("scheme"), {{"euler", Scheme::Euler}, {"rk4", Scheme::RK4}})
                               : Scheme::RK4;
  fc.time_term = fl.has("time_term") ? pick<PotentialTimeTerm>(fl.at("time_term"),
                                                                {{"conserving", PotentialTimeTerm::Conserving},
                                                                 {"printed", PotentialTimeTerm::Printed},
                                                                 {"none", PotentialTimeTerm::None}})
                                     : PotentialTimeTerm::Conserving;
  fc.det_threshold = fl.number("det_threshold", 1e-8);
  const Stepper stepper = fl.has("stepper") ? pick<Stepper>(fl.at("stepper"), {{"nadapted", Stepper::NAdapted},
                                                                               {"coordinate", Stepper::Coordinate},
                                                                               {"coupled", Stepper::Coupled}})
                                            : Stepper::NAdapted;
  const int every = fl.integer("every", 1);
  if (every < 1) fl.at("every").fail("every must be at least 1");
  const std::vector<int> dmargin = margin_of(fl, cfg.chart, 0);

  double h_lambda0 = 0.0, v_lambda0 = 0.0;
  bool homothetic = false;
  if (fl.has("boundary")) {
    const Node b = fl.at("boundary");
    const std::string kind = b.at("kind").string();
    if (kind != "homothetic") b.at("kind").fail("unknown boundary kind '" + kind + "'");
    homothetic = true;
    h_lambda0 = b.number("h_lambda0", 0.0);
    v_lambda0 = b.number("v_lambda0", 0.0);
    std::vector<int> bm = margin_of(b, cfg.chart, 2 * cfg.stencil.reach());
    const DMetricField d0 = g.d;
    fc.boundary = [d0, bm, h_lambda0, v_lambda0](FlowState& x) {
      const HomotheticFactors f = homothetic_reference(x.chi, h_lambda0, v_lambda0);
      const ChartSpec& c = d0.chart();
      for (std::size_t node = 0; node < c.nodes(); ++node) {
        if (is_interior(c, node, bm)) continue;
        for (std::size_t q = 0; q < d0.h.components(); ++q) x.d.h(node, q) = f.rho_h2 * d0.h(node, q);
        for (std::size_t q = 0; q < d0.v.components(); ++q) x.d.v(node, q) = f.rho_v2 * d0.v(node, q);
      }
    };
  }
  try {
    fc.validate();
  } catch (const InvalidInput& e) {
    fl.fail(e.what());
  }

  const DMetricField start = s.d;
  const double mu0 = mu_integral(s.f, s.tau, s.d);
  std::string csv = kFlowHeader;
  double F0 = 0.0, W0 = 0.0, F_prev = 0.0, chi_prev = 0.0;
  double F_drift = 0.0, W_drift = 0.0, dF_min = std::numeric_limits<double>::infinity();
  double h_err = 0.0, v_err = 0.0, mu_drift = 0.0, g_drift = 0.0;
  int rows = 0;
  auto emit = [&](const FlowState& x) {
    const FlowDiagnostics dg = diagnostics(x, cfg.stencil, dmargin);
    const double F = f_functional(x.d, x.nc, x.f, cfg.stencil).F;
    // W at the potential shifted back to unit normalization
    const double W = w_functional(x.d, x.nc, normalize_mu(x.f, x.tau, x.d), x.tau, cfg.stencil, cfg.w_variant);
    const double hr = mean_trace_ratio(x.d.h, start.h, cfg.chart.n, dmargin);
    const double vr = mean_trace_ratio(x.d.v, start.v, cfg.chart.m, dmargin);
    if (rows == 0) {
      F0 = F;
      W0 = W;
    } else {
      dF_min = std::min(dF_min, (F - F_prev) / (x.chi - chi_prev));
    }
    F_drift = std::max(F_drift, std::abs(F - F0));
    W_drift = std::max(W_drift, std::abs(W - W0));
    mu_drift = std::max(mu_drift, std::abs(mu_integral(x.f, x.tau, x.d) - mu0));
    g_drift = std::max({g_drift, max_abs_diff(x.d.h, start.h), max_abs_diff(x.d.v, start.v)});
    if (homothetic) {
      const HomotheticFactors ref = homothetic_reference(x.chi, h_lambda0, v_lambda0);
      h_err = std::max(h_err, std::abs(hr / ref.rho_h2 - 1.0));
      v_err = std::max(v_err, std::abs(vr / ref.rho_v2 - 1.0));
    }
    F_prev = F;
    chi_prev = x.chi;
    for (double v : {dg.chi, dg.tau, F, W, dg.hR_min, dg.hR_max, dg.vR_min, dg.vR_max, dg.R_ia_max, dg.R_ai_max,
                     dg.det_h_min, dg.det_h_max, dg.det_v_min, dg.det_v_max, hr, vr})
      csv += format_double(v) + ",";
    csv.back() = '\n';
    ++rows;
  };

  emit(s);
  int taken = 0;
  bool halted = false;
  std::string halt_reason;
  FlowConfig one = fc;
  one.steps = 1;
  try {
    for (; taken < fc.steps; ++taken) {
      s = run_flow(std::move(s), one, stepper);
      if ((taken + 1) % every == 0 || taken + 1 == fc.steps) emit(s);
    }
  } catch (const FlowHalted& e) {
    halted = true;
    halt_reason = e.what();
    s = e.last_state();
  }

  rec.emplace_back("steps", taken);
  rec.emplace_back("chi", s.chi);
  rec.emplace_back("tau", s.tau);
  rec.emplace_back("metric_drift", g_drift);
  rec.emplace_back("F_drift", F_drift);
  rec.emplace_back("W_drift", W_drift);
  rec.emplace_back("dF_rate_min", rows > 1 ? dF_min : 0.0);
  rec.emplace_back("mu_drift", mu_drift);
  if (homothetic) {
    rec.emplace_back("h_trace_error", h_err);
    rec.emplace_back("v_trace_error", v_err);
  }
  if (!cfg.output.empty()) {
    write_text(cfg.output + ".csv", csv);
    write_snapshot(cfg.output + "_final.json", s.d, s.nc, &s.f, s.chi, s.tau);
  }
  print_record(out, rec);
  if (halted) {
    err << "check failed: flow halted: " << halt_reason << "\n";
    return 1;
  }
  return 0;
}

int run_command(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  Record rec;
  int status = 0;
  switch (cfg.command) {
    case Command::Verify: rec = verify_catalog(cfg, nullptr); break;
    case Command::Catalog: {
      std::optional<Geometry> g;
      rec = verify_catalog(cfg, &g);
      if (g && !cfg.output.empty()) write_snapshot(cfg.output + "_metric.json", g->d, g->nc, nullptr, 0.0, 0.0);
      if (!g) rec.emplace_back("snapshot", 0.0);
      break;
    }
    case Command::Flow: status = run_flow_command(cfg, out, err, rec); break;
    case Command::Functional: {
      const Geometry g = geometry_of(cfg);
      const double tau = root(cfg).number("tau", 1.0);
      const GridField f = potential_of(cfg, g.d, tau);
      const FunctionalReport fr = functional_report(g.d, g.nc, f, tau, cfg.stencil, cfg.w_variant);
      rec = {{"F", fr.F},
             {"hF", fr.hF},
             {"vF", fr.vF},
             {"W", fr.W},
             {"lambda", fr.lambda},
             {"h_lambda", fr.h_lambda},
             {"v_lambda", fr.v_lambda},
             {"lambda_tilde", fr.lambda_tilde},
             {"volume", fr.volume},
             {"mu", mu_integral(f, tau, g.d)}};
      break;
    }
    case Command::Thermo: {
      const Geometry g = geometry_of(cfg);
      const double tau = root(cfg).number("tau", 1.0);
      const GridField f = potential_of(cfg, g.d, tau);
      const ThermoReport t = g.lagrange ? lagrange_thermodynamics(*g.lagrange, f, tau, cfg.stencil)
                                        : thermodynamics(g.d, g.nc, f, tau, cfg.stencil);
      rec = {{"energy", t.energy}, {"entropy", t.entropy}, {"fluctuation", t.fluctuation}, {"log_z", t.log_z}};
      break;
    }
    case Command::DEnergy: {
      const Geometry g = geometry_of(cfg);
      const DEnergy e = d_energy(g.d, g.nc, cfg.stencil);
      rec = {{"lambda", e.lambda},
             {"h_lambda", e.h_lambda},
             {"v_lambda", e.v_lambda},
             {"lambda_tilde", scale_invariant_energy(e.lambda, g.d)}};
      break;
    }
  }
  if (cfg.command != Command::Flow) {
    print_record(out, rec);
    if (!cfg.output.empty()) write_text(cfg.output + ".csv", record_csv(rec));
  }
  const int checks = apply_checks(cfg, rec, out, err);
  return std::max(status, checks);
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source, const Overrides& ov) {
  RunConfig cfg;
  cfg.source = source;
  auto doc = std::make_shared<Document>();
  try {
    doc->root = json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports a byte offset; turn it into line and column
    std::size_t line = 1, col = 1;
    for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
      if (text[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(col), "malformed JSON");
  }
  cfg.doc = doc;
  const Node r{&doc->root, ""};
  if (!doc->root.is_object()) r.fail("config must be an object");

  cfg.command = pick<Command>(r.at("command"), {{"verify", Command::Verify},
                                                {"flow", Command::Flow},
                                                {"functional", Command::Functional},
                                                {"thermo", Command::Thermo},
                                                {"catalog", Command::Catalog},
                                                {"d-energy", Command::DEnergy}});

  const Node ch = r.at("chart");
  cfg.chart.n = ch.at("n").integer();
  cfg.chart.m = ch.at("m").integer();
  if (cfg.chart.n < 1 || cfg.chart.m < 1) ch.fail("n and m must be positive");
  const int D = cfg.chart.dim();
  cfg.chart.extents = ch.at("extents").numbers();
  cfg.chart.resolution = ch.at("resolution").integers();
  if (ch.has("origin")) cfg.chart.origin = ch.at("origin").numbers();
  std::vector<int> fixed = ch.has("fixed_axes") ? ch.at("fixed_axes").integers() : std::vector<int>{};
  if (ov.resolution) {
    if (*ov.resolution < 8) throw ConfigError("--resolution", "resolution must be at least 8");
    for (int a = 0; a < static_cast<int>(cfg.chart.resolution.size()); ++a)
      if (std::find(fixed.begin(), fixed.end(), a) == fixed.end()) cfg.chart.resolution[a] = *ov.resolution;
  }
  try {
    cfg.chart.validate();
  } catch (const InvalidInput& e) {
    ch.fail(e.what());
  }
  if (ch.has("names")) {
    const Node nm = ch.at("names");
    if (nm.size() != static_cast<std::size_t>(D)) nm.fail("names needs one entry per axis");
    for (std::size_t k = 0; k < nm.size(); ++k) cfg.names.push_back(nm.at(k).string());
  } else {
    for (int i = 0; i < cfg.chart.n; ++i) cfg.names.push_back("x" + std::to_string(i + 1));
    for (int a = 0; a < cfg.chart.m; ++a) cfg.names.push_back("y" + std::to_string(cfg.chart.n + a + 1));
  }

  if (r.has("stencil")) {
    const Node st = r.at("stencil");
    cfg.stencil.order = st.integer("order", 2);
    try {
      cfg.stencil.validate();
    } catch (const InvalidInput& e) {
      st.at("order").fail(e.what());
    }
  }
  const std::map<std::string, WForm> wforms{{"printed", WForm::Printed}, {"squared", WForm::Squared}};
  if (r.has("w_variant")) cfg.w_variant = pick<WForm>(r.at("w_variant"), wforms);
  if (ov.w_variant) cfg.w_variant = *ov.w_variant;
  if (ov.steps) {
    if (*ov.steps < 0) throw ConfigError("--steps", "steps must be non-negative");
    cfg.steps = ov.steps;
  }
  return cfg;
}

RunConfig load_config(const std::string& path, const Overrides& ov) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(path, "cannot read config");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path, ov);
}

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    return run_command(cfg, out, err);
  } catch (const ConfigError& e) {
    err << "config error at " << e.location() << ": " << e.what() << "\n";
    return 2;
  } catch (const InvalidInput& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "check failed: pipeline: " << e.what() << "\n";
    return 1;
  }
}

int run_file(const std::string& path, const std::string& output, const Overrides& ov, std::ostream& out,
             std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_config(path, ov);
  } catch (const ConfigError& e) {
    err << "config error at " << e.location() << ": " << e.what() << "\n";
    return 2;
  }
  cfg.output = output;
  return run(cfg, out, err);
}

}  // namespace nhflow::cli
