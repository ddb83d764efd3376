#pragma once

#include <span>

#include "nhflow/grid.hpp"
#include "nhflow/nconnection.hpp"

namespace nhflow {

// Connection layout convention (all full-index fields): component
// (gamma*D + alpha)*D + beta holds Gamma^gamma_{alpha beta} with
// D_{e_beta} e_alpha = Gamma^gamma_{alpha beta} e_gamma.
struct DConnectionCoeffs {
  GridField Lh;  // L^i_jk, (i*n + j)*n + k
  GridField Lv;  // L^a_bk, (a*m + b)*n + k
  GridField Ch;  // C^i_jc, (i*n + j)*m + c
  GridField Cv;  // C^a_bc, (a*m + b)*m + c
  const ChartSpec& chart() const { return Lh.chart(); }
};

struct ChristoffelField {
  GridField gamma;  // coordinate frame, (D*D*D)
};

struct DistorsionField {
  GridField Z;  // adapted frame, same layout as the full connection
};

struct TorsionField {
  GridField T_ijk;  // (i*n + j)*n + k
  GridField T_ija;  // (i*n + j)*m + a
  GridField T_ajk;  // (a*n + j)*n + k
  GridField T_bja;  // (b*n + j)*m + a
  GridField T_bca;  // (b*m + c)*m + a
};

struct RicciData {
  GridField Rij;  // n x n
  GridField Rab;  // m x m
  GridField Ria;  // (i*m + a)
  GridField Rai;  // (a*n + i)
  GridField hR;
  GridField vR;
  GridField sR() const;
};

// d_mu N for every axis mu.
std::vector<GridField> n_derivatives(const NConnectionField& nc, const StencilConfig& cfg);

// e_alpha N_i^a at one node, layout (alpha*n + i)*m + a.
void adapted_n_derivatives_at(const NConnectionField& nc, const std::vector<GridField>& dN, std::size_t node,
                              double* out);
// W^f_{gamma alpha} with [e_gamma, e_alpha] = W^f_{gamma alpha} e_f, layout (f*D + gamma)*D + alpha.
void anholonomy_at(const ChartSpec& chart, const double* eN, const std::vector<GridField>& dN, std::size_t node,
                   double* W);

DConnectionCoeffs canonical_dconnection(const DMetricField& d, const NConnectionField& nc, const StencilConfig& cfg);
GridField full_connection(const DConnectionCoeffs& dc);
// 10 h^order (max|Gamma| + max|d Gamma|), h the coarsest spacing.
double stencil_tolerance(const DConnectionCoeffs& dc, const StencilConfig& cfg);

ChristoffelField levi_civita(const FullMetricField& g, const StencilConfig& cfg);
// Coordinate Christoffels rewritten in the N-adapted frame (not symmetric).
GridField levi_civita_adapted(const ChristoffelField& lc, const NConnectionField& nc, const StencilConfig& cfg);
// Levi-Civita connection in the adapted frame from the d-metric blocks and the
// anholonomy coefficients (Koszul formula); an independent route to the above.
GridField levi_civita_koszul(const DMetricField& d, const NConnectionField& nc, const StencilConfig& cfg);

DistorsionField distorsion(const GridField& lc_adapted, const DConnectionCoeffs& dc);
GridField reconstruct_levi_civita(const DConnectionCoeffs& dc, const DistorsionField& z);

TorsionField torsion(const DConnectionCoeffs& dc, const NConnectionField& nc, const StencilConfig& cfg);

// Ricci contraction R_{beta gamma} = R^alpha_{beta gamma alpha} of any
// connection given in the adapted frame; layout beta*D + gamma.
GridField ricci_from_connection(const GridField& gamma, const NConnectionField& nc, const StencilConfig& cfg);
RicciData split_ricci(const GridField& ricci_full, const DMetricField& d);
RicciData curvature_ricci(const DConnectionCoeffs& dc, const NConnectionField& nc, const DMetricField& d,
                          const StencilConfig& cfg);

// e_gamma g_rs for both blocks, layout (r*k + s)*D + gamma.
struct AdaptedMetricDerivatives {
  GridField h;
  GridField v;
};
AdaptedMetricDerivatives adapted_metric_derivatives(const DMetricField& d, const NConnectionField& nc,
                                                    const StencilConfig& cfg);
// max |D_gamma g_{alpha beta}| over the interior; only the diagonal blocks can
// be nonzero for a d-connection.
double compatibility_residual(const DConnectionCoeffs& dc, const DMetricField& d,
                              const AdaptedMetricDerivatives& dg, std::span<const int> margin = {});

// e_alpha f, D components.
GridField adapted_gradient(const GridField& f, const NConnectionField& nc, const StencilConfig& cfg);
// (D_{e_alpha} df)(e_beta) = e_alpha e_beta f - Gamma^gamma_{beta alpha} e_gamma f, layout alpha*D + beta.
GridField adapted_hessian(const GridField& f, const GridField& gamma, const NConnectionField& nc,
                          const StencilConfig& cfg);

// g^{ij} Hess_ij + g^{ab} Hess_ab.
GridField d_laplacian(const GridField& f, const GridField& gamma, const DMetricField& d, const NConnectionField& nc,
                      const StencilConfig& cfg);
// g^{ij} e_i f e_j f + g^{ab} d_a f d_b f.
GridField gradient_norm2(const GridField& f, const DMetricField& d, const NConnectionField& nc,
                         const StencilConfig& cfg);
// Blockwise trace g^{ij} T_ij + g^{ab} T_ab of a full (D x D) field.
GridField block_trace(const GridField& t, const DMetricField& d);

}  // namespace nhflow
