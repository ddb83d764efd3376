#include "nhflow/connections.hpp"

#include <cmath>

#include "nhflow/dense.hpp"
#include "nhflow/errors.hpp"

namespace nhflow {

namespace {

std::vector<GridField> all_partials(const GridField& f, const StencilConfig& cfg) {
  std::vector<GridField> out;
  out.reserve(static_cast<std::size_t>(f.chart().dim()));
  for (int mu = 0; mu < f.chart().dim(); ++mu) out.push_back(partial_derivative(f, mu, cfg));
  return out;
}

dense::Mat inverse_at(const GridField& blk, int k, std::size_t node, const char* what) {
  dense::Mat inv(k, k);
  if (!dense::try_inverse(dense::load(blk.node_ptr(node), k), inv))
    throw SingularMetric(std::string(what) + ": singular block at " + describe_node(blk.chart(), node));
  return inv;
}

// e_gamma of a block field given its partials: result layout (comp)*D + gamma.
GridField adapted_block_derivatives(const GridField& blk, const NConnectionField& nc, const StencilConfig& cfg) {
  const ChartSpec& c = blk.chart();
  const int n = c.n, m = c.m, D = c.dim();
  const std::size_t K = blk.components();
  std::vector<GridField> d = all_partials(blk, cfg);
  std::vector<Slot> shape = blk.shape();
  shape.push_back(Slot::A);
  GridField out(c, shape);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    double* o = out.node_ptr(node);
    for (std::size_t q = 0; q < K; ++q) {
      for (int g = 0; g < D; ++g) o[q * D + g] = d[g](node, q);
      for (int i = 0; i < n; ++i)
        for (int a = 0; a < m; ++a) o[q * D + i] -= nc(node, i, a) * d[n + a](node, q);
    }
  }
  return out;
}

}  // namespace

GridField RicciData::sR() const {
  GridField s = hR;
  for (std::size_t node = 0; node < s.nodes(); ++node) s(node) += vR(node);
  return s;
}

std::vector<GridField> n_derivatives(const NConnectionField& nc, const StencilConfig& cfg) {
  return all_partials(nc.N, cfg);
}

void adapted_n_derivatives_at(const NConnectionField& nc, const std::vector<GridField>& dN, std::size_t node,
                              double* out) {
  const ChartSpec& c = nc.chart();
  const int n = c.n, m = c.m, D = c.dim();
  for (int al = 0; al < D; ++al)
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < m; ++a) {
        double v = dN[al](node, i * m + a);
        if (al < n)
          for (int b = 0; b < m; ++b) v -= nc(node, al, b) * dN[n + b](node, i * m + a);
        out[(al * n + i) * m + a] = v;
      }
}

void anholonomy_at(const ChartSpec& c, const double* eN, const std::vector<GridField>& dN, std::size_t node,
                   double* W) {
  const int n = c.n, m = c.m, D = c.dim();
  std::fill(W, W + D * D * D, 0.0);
  for (int a = 0; a < m; ++a) {
    const int f = n + a;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        W[(f * D + i) * D + j] = eN[(j * n + i) * m + a] - eN[(i * n + j) * m + a];
    for (int i = 0; i < n; ++i)
      for (int b = 0; b < m; ++b) {
        const double v = dN[n + b](node, i * m + a);  // d_b N_i^a
        W[(f * D + i) * D + n + b] = v;
        W[(f * D + n + b) * D + i] = -v;
      }
  }
}

DConnectionCoeffs canonical_dconnection(const DMetricField& d, const NConnectionField& nc, const StencilConfig& cfg) {
  require_same_chart(d.chart(), nc.chart(), "canonical_dconnection");
  cfg.validate();
  const ChartSpec& c = d.chart();
  const int n = c.n, m = c.m, D = c.dim();
  GridField egh = adapted_block_derivatives(d.h, nc, cfg);
  GridField egv = adapted_block_derivatives(d.v, nc, cfg);
  std::vector<GridField> dN = n_derivatives(nc, cfg);

  DConnectionCoeffs out{GridField(c, {Slot::H, Slot::H, Slot::H}), GridField(c, {Slot::V, Slot::V, Slot::H}),
                        GridField(c, {Slot::H, Slot::H, Slot::V}), GridField(c, {Slot::V, Slot::V, Slot::V})};
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const dense::Mat ghi = inverse_at(d.h, n, node, "canonical_dconnection");
    const dense::Mat gvi = inverse_at(d.v, m, node, "canonical_dconnection");
    const double* gv = d.v.node_ptr(node);
    const double* eh = egh.node_ptr(node);  // e_g g_rs at (r*n + s)*D + g
    const double* ev = egv.node_ptr(node);
    auto EH = [&](int r, int s, int g) { return eh[(r * n + s) * D + g]; };
    auto EV = [&](int a, int b, int g) { return ev[(a * m + b) * D + g]; };
    auto dBN = [&](int b, int k, int a) { return dN[n + b](node, k * m + a); };  // d_b N_k^a

    double* Lh = out.Lh.node_ptr(node);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = j; k < n; ++k) {
          double s = 0.0;
          for (int r = 0; r < n; ++r) s += ghi(i, r) * (EH(j, r, k) + EH(k, r, j) - EH(j, k, r));
          Lh[(i * n + j) * n + k] = Lh[(i * n + k) * n + j] = 0.5 * s;
        }

    double* Lv = out.Lv.node_ptr(node);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        for (int k = 0; k < n; ++k) {
          double s = 0.0;
          for (int cc = 0; cc < m; ++cc) {
            double t = EV(b, cc, k);
            for (int e = 0; e < m; ++e) t -= gv[e * m + cc] * dBN(b, k, e) + gv[e * m + b] * dBN(cc, k, e);
            s += gvi(a, cc) * t;
          }
          Lv[(a * m + b) * n + k] = dBN(b, k, a) + 0.5 * s;
        }

    double* Ch = out.Ch.node_ptr(node);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int cc = 0; cc < m; ++cc) {
          double s = 0.0;
          for (int k = 0; k < n; ++k) s += ghi(i, k) * EH(j, k, n + cc);
          Ch[(i * n + j) * m + cc] = 0.5 * s;
        }

    double* Cv = out.Cv.node_ptr(node);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        for (int cc = b; cc < m; ++cc) {
          double s = 0.0;
          for (int e = 0; e < m; ++e) s += gvi(a, e) * (EV(b, e, n + cc) + EV(cc, e, n + b) - EV(b, cc, n + e));
          Cv[(a * m + b) * m + cc] = Cv[(a * m + cc) * m + b] = 0.5 * s;
        }
  }
  return out;
}

GridField full_connection(const DConnectionCoeffs& dc) {
  const ChartSpec& c = dc.chart();
  const int n = c.n, m = c.m, D = c.dim();
  GridField G(c, {Slot::A, Slot::A, Slot::A});
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    double* g = G.node_ptr(node);
    const double* Lh = dc.Lh.node_ptr(node);
    const double* Lv = dc.Lv.node_ptr(node);
    const double* Ch = dc.Ch.node_ptr(node);
    const double* Cv = dc.Cv.node_ptr(node);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) g[(i * D + j) * D + k] = Lh[(i * n + j) * n + k];
        for (int a = 0; a < m; ++a) g[(i * D + j) * D + n + a] = Ch[(i * n + j) * m + a];
      }
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        for (int k = 0; k < n; ++k) g[((n + a) * D + n + b) * D + k] = Lv[(a * m + b) * n + k];
        for (int e = 0; e < m; ++e) g[((n + a) * D + n + b) * D + n + e] = Cv[(a * m + b) * m + e];
      }
  }
  return G;
}

double stencil_tolerance(const DConnectionCoeffs& dc, const StencilConfig& cfg) {
  const ChartSpec& c = dc.chart();
  double h = 0.0;
  for (int mu = 0; mu < c.dim(); ++mu) h = std::max(h, c.spacing(mu));
  double g0 = 0.0, g1 = 0.0;
  for (const GridField* f : {&dc.Lh, &dc.Lv, &dc.Ch, &dc.Cv}) {
    g0 = std::max(g0, max_abs(*f));
    for (int mu = 0; mu < c.dim(); ++mu) g1 = std::max(g1, max_abs(partial_derivative(*f, mu, cfg)));
  }
  return 10.0 * std::pow(h, cfg.order) * (g0 + g1);
}

ChristoffelField levi_civita(const FullMetricField& full, const StencilConfig& cfg) {
  cfg.validate();
  const ChartSpec& c = full.chart();
  const int D = c.dim();
  std::vector<GridField> dg = all_partials(full.g, cfg);
  ChristoffelField out{GridField(c, {Slot::A, Slot::A, Slot::A})};
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const dense::Mat gi = inverse_at(full.g, D, node, "levi_civita");
    auto dG = [&](int mu, int a, int b) { return dg[mu](node, a * D + b); };
    double* G = out.gamma.node_ptr(node);
    for (int g = 0; g < D; ++g)
      for (int a = 0; a < D; ++a)
        for (int b = a; b < D; ++b) {
          double s = 0.0;
          for (int e = 0; e < D; ++e) s += gi(g, e) * (dG(a, e, b) + dG(b, e, a) - dG(e, a, b));
          G[(g * D + a) * D + b] = G[(g * D + b) * D + a] = 0.5 * s;
        }
  }
  return out;
}

GridField levi_civita_adapted(const ChristoffelField& lc, const NConnectionField& nc, const StencilConfig& cfg) {
  const ChartSpec& c = nc.chart();
  require_same_chart(lc.gamma.chart(), c, "levi_civita_adapted");
  const int n = c.n, m = c.m, D = c.dim();
  std::vector<GridField> dN = n_derivatives(nc, cfg);
  std::vector<double> eN(static_cast<std::size_t>(D * n * m));
  std::vector<double> T(static_cast<std::size_t>(D * D * D));
  GridField out(c, {Slot::A, Slot::A, Slot::A});
  dense::Mat E(D, D), th(D, D);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    adapted_n_derivatives_at(nc, dN, node, eN.data());
    E.setIdentity();
    th.setIdentity();
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < m; ++a) {
        E(i, n + a) = -nc(node, i, a);
        th(n + a, i) = nc(node, i, a);
      }
    const double* G = lc.gamma.node_ptr(node);
    // T^rho_{alpha beta} = E_beta^nu E_alpha^mu Gamma^rho_{mu nu} + e_beta(E_alpha^rho)
    for (int r = 0; r < D; ++r)
      for (int al = 0; al < D; ++al)
        for (int be = 0; be < D; ++be) {
          double s = 0.0;
          for (int mu = 0; mu < D; ++mu) {
            if (E(al, mu) == 0.0) continue;
            for (int nu = 0; nu < D; ++nu) s += E(be, nu) * E(al, mu) * G[(r * D + mu) * D + nu];
          }
          if (al < n && r >= n) s -= eN[(be * n + al) * m + (r - n)];
          T[(r * D + al) * D + be] = s;
        }
    double* o = out.node_ptr(node);
    for (int g = 0; g < D; ++g)
      for (int ab = 0; ab < D * D; ++ab) {
        double s = 0.0;
        for (int r = 0; r < D; ++r) s += th(g, r) * T[r * D * D + ab];
        o[g * D * D + ab] = s;
      }
  }
  return out;
}

GridField levi_civita_koszul(const DMetricField& d, const NConnectionField& nc, const StencilConfig& cfg) {
  require_same_chart(d.chart(), nc.chart(), "levi_civita_koszul");
  const ChartSpec& c = d.chart();
  const int n = c.n, m = c.m, D = c.dim();
  GridField egh = adapted_block_derivatives(d.h, nc, cfg);
  GridField egv = adapted_block_derivatives(d.v, nc, cfg);
  std::vector<GridField> dN = n_derivatives(nc, cfg);
  std::vector<double> eN(static_cast<std::size_t>(D * n * m));
  std::vector<double> W(static_cast<std::size_t>(D * D * D));
  std::vector<double> low(static_cast<std::size_t>(D * D * D));
  std::vector<double> g(static_cast<std::size_t>(D * D));
  std::vector<double> eg(static_cast<std::size_t>(D * D * D));  // e_gamma g_{ab} at (a*D + b)*D + gamma
  GridField out(c, {Slot::A, Slot::A, Slot::A});
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    adapted_n_derivatives_at(nc, dN, node, eN.data());
    anholonomy_at(c, eN.data(), dN, node, W.data());
    std::fill(g.begin(), g.end(), 0.0);
    std::fill(eg.begin(), eg.end(), 0.0);
    for (int r = 0; r < n; ++r)
      for (int s = 0; s < n; ++s) {
        g[r * D + s] = d.h(node, r * n + s);
        for (int q = 0; q < D; ++q) eg[(r * D + s) * D + q] = egh(node, (r * n + s) * D + q);
      }
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        g[(n + a) * D + n + b] = d.v(node, a * m + b);
        for (int q = 0; q < D; ++q) eg[((n + a) * D + n + b) * D + q] = egv(node, (a * m + b) * D + q);
      }
    auto Wf = [&](int f, int x, int y) { return W[(f * D + x) * D + y]; };
    // low[(de*D + al)*D + be] = g(D_{e_be} e_al, e_de)
    for (int de = 0; de < D; ++de)
      for (int al = 0; al < D; ++al)
        for (int be = 0; be < D; ++be) {
          double s = eg[(al * D + de) * D + be] + eg[(be * D + de) * D + al] - eg[(be * D + al) * D + de];
          for (int f = 0; f < D; ++f)
            s += Wf(f, be, al) * g[f * D + de] - Wf(f, be, de) * g[f * D + al] - Wf(f, al, de) * g[f * D + be];
          low[(de * D + al) * D + be] = 0.5 * s;
        }
    const dense::Mat ghi = inverse_at(d.h, n, node, "levi_civita_koszul");
    const dense::Mat gvi = inverse_at(d.v, m, node, "levi_civita_koszul");
    double* o = out.node_ptr(node);
    for (int ga = 0; ga < D; ++ga)
      for (int ab = 0; ab < D * D; ++ab) {
        double s = 0.0;
        if (ga < n)
          for (int r = 0; r < n; ++r) s += ghi(ga, r) * low[r * D * D + ab];
        else
          for (int b = 0; b < m; ++b) s += gvi(ga - n, b) * low[(n + b) * D * D + ab];
        o[ga * D * D + ab] = s;
      }
  }
  return out;
}

DistorsionField distorsion(const GridField& lc_adapted, const DConnectionCoeffs& dc) {
  require_same_chart(lc_adapted.chart(), dc.chart(), "distorsion");
  GridField hat = full_connection(dc);
  DistorsionField z{GridField(dc.chart(), {Slot::A, Slot::A, Slot::A})};
  auto zo = z.Z.values();
  auto a = lc_adapted.values();
  auto b = hat.values();
  for (std::size_t q = 0; q < zo.size(); ++q) zo[q] = a[q] - b[q];
  return z;
}

GridField reconstruct_levi_civita(const DConnectionCoeffs& dc, const DistorsionField& z) {
  GridField out = full_connection(dc);
  auto o = out.values();
  auto zz = z.Z.values();
  for (std::size_t q = 0; q < o.size(); ++q) o[q] += zz[q];
  return out;
}

TorsionField torsion(const DConnectionCoeffs& dc, const NConnectionField& nc, const StencilConfig& cfg) {
  require_same_chart(dc.chart(), nc.chart(), "torsion");
  const ChartSpec& c = dc.chart();
  const int n = c.n, m = c.m, D = c.dim();
  TorsionField t{GridField(c, {Slot::H, Slot::H, Slot::H}), GridField(c, {Slot::H, Slot::H, Slot::V}),
                 GridField(c, {Slot::V, Slot::H, Slot::H}), GridField(c, {Slot::V, Slot::H, Slot::V}),
                 GridField(c, {Slot::V, Slot::V, Slot::V})};
  std::vector<GridField> dN = n_derivatives(nc, cfg);
  std::vector<double> eN(static_cast<std::size_t>(D * n * m));
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    adapted_n_derivatives_at(nc, dN, node, eN.data());
    const double* Lh = dc.Lh.node_ptr(node);
    const double* Lv = dc.Lv.node_ptr(node);
    const double* Ch = dc.Ch.node_ptr(node);
    const double* Cv = dc.Cv.node_ptr(node);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) t.T_ijk(node, (i * n + j) * n + k) = Lh[(i * n + k) * n + j] - Lh[(i * n + j) * n + k];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int a = 0; a < m; ++a) t.T_ija(node, (i * n + j) * m + a) = -Ch[(i * n + j) * m + a];
    for (int a = 0; a < m; ++a)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
          t.T_ajk(node, (a * n + j) * n + k) = eN[(j * n + k) * m + a] - eN[(k * n + j) * m + a];
    for (int b = 0; b < m; ++b)
      for (int j = 0; j < n; ++j)
        for (int a = 0; a < m; ++a)
          t.T_bja(node, (b * n + j) * m + a) = Lv[(b * m + a) * n + j] - dN[n + a](node, j * m + b);
    for (int b = 0; b < m; ++b)
      for (int cc = 0; cc < m; ++cc)
        for (int a = 0; a < m; ++a)
          t.T_bca(node, (b * m + cc) * m + a) = Cv[(b * m + a) * m + cc] - Cv[(b * m + cc) * m + a];
  }
  return t;
}

GridField ricci_from_connection(const GridField& G, const NConnectionField& nc, const StencilConfig& cfg) {
  require_same_chart(G.chart(), nc.chart(), "ricci_from_connection");
  cfg.validate();
  const ChartSpec& c = G.chart();
  const int n = c.n, m = c.m, D = c.dim();
  const std::size_t D2 = static_cast<std::size_t>(D * D);
  const std::size_t nodes = c.nodes();

  // div_{beta gamma} = sum_alpha e_alpha Gamma^alpha_{beta gamma}
  GridField div(c, {Slot::A, Slot::A});
  std::vector<double> w(nodes);
  for (int al = 0; al < D; ++al) {
    accumulate_derivative(G, al * D2, D2, al, cfg, nullptr, 1.0, div, 0);
    if (al >= n) continue;
    for (int a = 0; a < m; ++a) {
      bool any = false;
      for (std::size_t node = 0; node < nodes; ++node) {
        w[node] = nc(node, al, a);
        any = any || w[node] != 0.0;
      }
      if (any) accumulate_derivative(G, al * D2, D2, n + a, cfg, w.data(), -1.0, div, 0);
    }
  }

  // t_beta = Gamma^alpha_{beta alpha}, and e_gamma t_beta
  GridField tr(c, {Slot::A});
  for (std::size_t node = 0; node < nodes; ++node) {
    const double* g = G.node_ptr(node);
    for (int be = 0; be < D; ++be) {
      double s = 0.0;
      for (int al = 0; al < D; ++al) s += g[(al * D + be) * D + al];
      tr(node, be) = s;
    }
  }
  std::vector<GridField> dtr = all_partials(tr, cfg);
  std::vector<GridField> dN = n_derivatives(nc, cfg);

  GridField R(c, {Slot::A, Slot::A});
  std::vector<double> eN(static_cast<std::size_t>(D * n * m));
  std::vector<double> W(static_cast<std::size_t>(D * D * D));
  for (std::size_t node = 0; node < nodes; ++node) {
    const double* g = G.node_ptr(node);
    const double* t = tr.node_ptr(node);
    adapted_n_derivatives_at(nc, dN, node, eN.data());
    anholonomy_at(c, eN.data(), dN, node, W.data());
    auto Gm = [&](int x, int y, int z) { return g[(x * D + y) * D + z]; };
    double* r = R.node_ptr(node);
    for (int be = 0; be < D; ++be)
      for (int ga = 0; ga < D; ++ga) {
        double et = dtr[ga](node, be);
        if (ga < n)
          for (int a = 0; a < m; ++a) et -= nc(node, ga, a) * dtr[n + a](node, be);
        double s = div(node, be * D + ga) - et;
        for (int f = 0; f < D; ++f) {
          s += Gm(f, be, ga) * t[f];
          for (int al = 0; al < D; ++al)
            s += -Gm(f, be, al) * Gm(al, f, ga) + Gm(al, be, f) * W[(f * D + ga) * D + al];
        }
        r[be * D + ga] = s;
      }
  }
  return R;
}

RicciData split_ricci(const GridField& Rf, const DMetricField& d) {
  const ChartSpec& c = d.chart();
  require_same_chart(Rf.chart(), c, "split_ricci");
  const int n = c.n, m = c.m, D = c.dim();
  RicciData out{GridField(c, {Slot::H, Slot::H}), GridField(c, {Slot::V, Slot::V}), GridField(c, {Slot::H, Slot::V}),
                GridField(c, {Slot::V, Slot::H}), GridField::scalar(c), GridField::scalar(c)};
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const double* r = Rf.node_ptr(node);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) out.Rij(node, i * n + j) = r[i * D + j];
      for (int a = 0; a < m; ++a) {
        out.Ria(node, i * m + a) = r[i * D + n + a];
        out.Rai(node, a * n + i) = r[(n + a) * D + i];
      }
    }
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) out.Rab(node, a * m + b) = r[(n + a) * D + n + b];
    const dense::Mat ghi = inverse_at(d.h, n, node, "split_ricci");
    const dense::Mat gvi = inverse_at(d.v, m, node, "split_ricci");
    double hs = 0.0, vs = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) hs += ghi(i, j) * r[i * D + j];
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) vs += gvi(a, b) * r[(n + a) * D + n + b];
    out.hR(node) = hs;
    out.vR(node) = vs;
  }
  return out;
}

RicciData curvature_ricci(const DConnectionCoeffs& dc, const NConnectionField& nc, const DMetricField& d,
                          const StencilConfig& cfg) {
  return split_ricci(ricci_from_connection(full_connection(dc), nc, cfg), d);
}

AdaptedMetricDerivatives adapted_metric_derivatives(const DMetricField& d, const NConnectionField& nc,
                                                    const StencilConfig& cfg) {
  return {adapted_block_derivatives(d.h, nc, cfg), adapted_block_derivatives(d.v, nc, cfg)};
}

double compatibility_residual(const DConnectionCoeffs& dc, const DMetricField& d, const AdaptedMetricDerivatives& dg,
                              std::span<const int> margin) {
  const ChartSpec& c = d.chart();
  const int n = c.n, m = c.m, D = c.dim();
  GridField G = full_connection(dc);
  double worst = 0.0;
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    if (!is_interior(c, node, margin)) continue;
    const double* g = G.node_ptr(node);
    auto Gm = [&](int x, int y, int z) { return g[(x * D + y) * D + z]; };
    const double* gh = d.h.node_ptr(node);
    const double* gv = d.v.node_ptr(node);
    for (int ga = 0; ga < D; ++ga) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          double s = dg.h(node, (i * n + j) * D + ga);
          for (int k = 0; k < n; ++k) s -= Gm(k, i, ga) * gh[k * n + j] + Gm(k, j, ga) * gh[i * n + k];
          worst = std::max(worst, std::abs(s));
        }
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) {
          double s = dg.v(node, (a * m + b) * D + ga);
          for (int e = 0; e < m; ++e)
            s -= Gm(n + e, n + a, ga) * gv[e * m + b] + Gm(n + e, n + b, ga) * gv[a * m + e];
          worst = std::max(worst, std::abs(s));
        }
    }
  }
  return worst;
}

GridField adapted_gradient(const GridField& f, const NConnectionField& nc, const StencilConfig& cfg) {
  const ChartSpec& c = f.chart();
  require_same_chart(c, nc.chart(), "adapted_gradient");
  const int n = c.n, m = c.m, D = c.dim();
  std::vector<GridField> d = all_partials(f, cfg);
  GridField out(c, {Slot::A});
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    for (int al = 0; al < D; ++al) out(node, al) = d[al](node);
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < m; ++a) out(node, i) -= nc(node, i, a) * d[n + a](node);
  }
  return out;
}

GridField adapted_hessian(const GridField& f, const GridField& G, const NConnectionField& nc,
                          const StencilConfig& cfg) {
  const ChartSpec& c = f.chart();
  require_same_chart(c, nc.chart(), "adapted_hessian");
  require_same_chart(c, G.chart(), "adapted_hessian");
  const int n = c.n, m = c.m, D = c.dim();
  std::vector<GridField> d1 = all_partials(f, cfg);
  std::vector<GridField> d2(static_cast<std::size_t>(D * D));
  for (int a = 0; a < D; ++a)
    for (int b = a; b < D; ++b) d2[a * D + b] = second_derivative(f, a, b, cfg);
  std::vector<GridField> dN = n_derivatives(nc, cfg);
  std::vector<double> eN(static_cast<std::size_t>(D * n * m));
  std::vector<double> ef(static_cast<std::size_t>(D));
  GridField out(c, {Slot::A, Slot::A});
  dense::Mat E(D, D), S(D, D);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    adapted_n_derivatives_at(nc, dN, node, eN.data());
    E.setIdentity();
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < m; ++a) E(i, n + a) = -nc(node, i, a);
    for (int a = 0; a < D; ++a)
      for (int b = a; b < D; ++b) S(a, b) = S(b, a) = d2[a * D + b](node);
    for (int al = 0; al < D; ++al) {
      double s = 0.0;
      for (int mu = 0; mu < D; ++mu) s += E(al, mu) * d1[mu](node);
      ef[al] = s;
    }
    const dense::Mat ES = E * S * E.transpose();
    const double* g = G.node_ptr(node);
    double* o = out.node_ptr(node);
    for (int al = 0; al < D; ++al)
      for (int be = 0; be < D; ++be) {
        double s = ES(al, be);
        if (be < n)
          for (int a = 0; a < m; ++a) s -= eN[(al * n + be) * m + a] * d1[n + a](node);
        for (int ga = 0; ga < D; ++ga) s -= g[(ga * D + be) * D + al] * ef[ga];
        o[al * D + be] = s;
      }
  }
  return out;
}

GridField block_trace(const GridField& t, const DMetricField& d) {
  const ChartSpec& c = d.chart();
  require_same_chart(c, t.chart(), "block_trace");
  const int n = c.n, m = c.m, D = c.dim();
  GridField out = GridField::scalar(c);
  for (std::size_t node = 0; node < c.nodes(); ++node) {
    const dense::Mat ghi = inverse_at(d.h, n, node, "block_trace");
    const dense::Mat gvi = inverse_at(d.v, m, node, "block_trace");
    const double* p = t.node_ptr(node);
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) s += ghi(i, j) * p[i * D + j];
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) s += gvi(a, b) * p[(n + a) * D + n + b];
    out(node) = s;
  }
  return out;
}

GridField d_laplacian(const GridField& f, const GridField& gamma, const DMetricField& d, const NConnectionField& nc,
                      const StencilConfig& cfg) {
  return block_trace(adapted_hessian(f, gamma, nc, cfg), d);
}

GridField gradient_norm2(const GridField& f, const DMetricField& d, const NConnectionField& nc,
                         const StencilConfig& cfg) {
  const ChartSpec& c = d.chart();
  const int D = c.dim();
  GridField e = adapted_gradient(f, nc, cfg);
  GridField outer(c, {Slot::A, Slot::A});
  for (std::size_t node = 0; node < c.nodes(); ++node)
    for (int a = 0; a < D; ++a)
      for (int b = 0; b < D; ++b) outer(node, a * D + b) = e(node, a) * e(node, b);
  return block_trace(outer, d);
}

}  // namespace nhflow
