#pragma once

#include <optional>

#include "nhflow/connections.hpp"
#include "nhflow/grid.hpp"
#include "nhflow/nconnection.hpp"

namespace nhflow {

struct LagrangeModel;

struct FValue {
  double F = 0.0;
  double hF = 0.0;
  double vF = 0.0;
};
// F = int (hR + vR + |D f|^2) e^{-f} dV, split into its h and v integrands.
FValue f_functional(const DMetricField& d, const NConnectionField& nc, const GridField& f, const StencilConfig& cfg);

// Printed: tau (hR + vR + |hDf| + |vDf|)^2.  Squared: tau (hR + vR + |hDf|^2 + |vDf|^2).
enum class WForm { Printed, Squared };
double w_functional(const DMetricField& d, const NConnectionField& nc, const GridField& f, double tau,
                    const StencilConfig& cfg, WForm form = WForm::Printed);

// 2 int (|R_ij + D_i D_j f|^2 + |R_ab + D_a D_b f|^2) e^{-f} dV, the F rate along
// the coupled flow without a time term.
double f_gradient_rate(const DMetricField& d, const NConnectionField& nc, const GridField& f, const StencilConfig& cfg);

// int (4 pi tau)^{-(n+m)/2} e^{-f} dV
double mu_integral(const GridField& f, double tau, const DMetricField& d);
GridField normalize_mu(const GridField& f, double tau, const DMetricField& d);

struct VariationSpec {
  GridField vh;  // symmetric n x n
  GridField vv;  // symmetric m x m
  GridField hf;
  GridField vf;
  double eta = 0.0;
};
// Consistent: the derivative of F along (g + eps v, f + eps (hf + vf)).
// Printed: the split form with a standalone scalar-curvature term.
enum class VariationForm { Consistent, Printed };
double first_variation_F(const DMetricField& d, const NConnectionField& nc, const GridField& f,
                         const VariationSpec& var, const StencilConfig& cfg,
                         VariationForm form = VariationForm::Consistent);

// Delta u = C^{mu nu} d_mu d_nu u + B^mu d_mu u, restricted to the h, v or full trace.
enum class LaplaceBlock { Full, H, V };
struct LaplaceOperator {
  GridField C;  // D x D
  GridField B;  // D
  StencilConfig cfg;
  GridField apply(const GridField& u) const;
};
LaplaceOperator laplace_operator(const DMetricField& d, const NConnectionField& nc, const StencilConfig& cfg,
                                 LaplaceBlock block = LaplaceBlock::Full);

struct EigenOptions {
  int max_iter = 300;
  double tol = 1e-11;     // relative change of the eigenvalue estimate
  int inner_max = 5000;
  double inner_tol = 1e-13;
};
struct EigenResult {
  double lambda = 0.0;
  GridField u;  // normalized with int u^2 dV = 1, positive mean
  int iterations = 0;
};
// Bottom eigenvalue of -4 lap + potential.
EigenResult bottom_eigenpair(const LaplaceOperator& lap, const GridField& potential, const GridField& volume,
                             const EigenOptions& opt = {});

struct DEnergy {
  double lambda = 0.0;
  double h_lambda = 0.0;
  double v_lambda = 0.0;
  GridField minimizer;  // -2 ln |u0|
};
// With a potential override the three operators use it (full) and its h/v parts.
struct DEnergyOptions {
  EigenOptions eigen{};
  std::optional<GridField> h_potential;
  std::optional<GridField> v_potential;
};
DEnergy d_energy(const DMetricField& d, const NConnectionField& nc, const StencilConfig& cfg,
                 const DEnergyOptions& opt = {});

double scale_invariant_energy(double lambda, const DMetricField& d);

struct ThermoReport {
  double energy = 0.0;
  double entropy = 0.0;
  double fluctuation = 0.0;
  double log_z = 0.0;
};
ThermoReport thermodynamics(const DMetricField& d, const NConnectionField& nc, const GridField& f, double tau,
                            const StencilConfig& cfg);
ThermoReport lagrange_thermodynamics(const LagrangeModel& model, const GridField& f, double tau,
                                     const StencilConfig& cfg);

struct FunctionalReport {
  double F = 0.0, W = 0.0, hF = 0.0, vF = 0.0;
  double lambda = 0.0, h_lambda = 0.0, v_lambda = 0.0;
  double lambda_tilde = 0.0;
  double volume = 0.0;
};
FunctionalReport functional_report(const DMetricField& d, const NConnectionField& nc, const GridField& f, double tau,
                                   const StencilConfig& cfg, WForm form = WForm::Printed);

}  // namespace nhflow
