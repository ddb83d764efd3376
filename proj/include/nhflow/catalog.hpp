#pragma once

#include <array>
#include <functional>
#include <span>

#include "nhflow/connections.hpp"
#include "nhflow/grid.hpp"
#include "nhflow/hyperdual.hpp"
#include "nhflow/nconnection.hpp"

namespace nhflow {

using Fn1 = std::function<double(double)>;
using Fn2 = std::function<double(double, double)>;
using Fn3 = std::function<double(double, double, double)>;

// Fourth-order central difference of a scalar function.
double central_difference(const Fn1& f, double x, double step = 1e-3);

// ---- pp-waves -------------------------------------------------------------

struct PPWaveSpec {
  enum class Kind { Monochromatic, Packet, Custom };
  Kind kind = Kind::Monochromatic;
  Fn3 kappa;        // used for Custom, arguments (x, y, p)
  double p0 = 1.0;  // packet half-width
  int eps1 = -1;    // sign of the extra direction when it is kept
};

double pp_wave_kappa_value(const PPWaveSpec& spec, double x, double y, double p);

struct PPWaveKappa {
  GridField kappa;
  double harmonicity = 0.0;  // max interior |k_xx + k_yy|
};
// Axes 0, 1, 2 of the chart are (x, y, p), or (kappa-direction, x, y, p) when n = 3.
PPWaveKappa pp_wave_kappa(const PPWaveSpec& spec, const ChartSpec& chart, const StencilConfig& cfg = {});

// diag(eps1, -1, -1, -2 k, 1/(8 k)) on a 3+2 chart, or without the first entry on a 2+2 chart.
FullMetricField build_pp_wave_5d(const PPWaveSpec& spec, const ChartSpec& chart);

// Levi-Civita Ricci of a coordinate metric; max interior component.
double metric_ricci_residual(const FullMetricField& g, const StencilConfig& cfg, std::span<const int> margin);

// ---- solitons ---------------------------------------------------------------

// q = 4 atan(e^{sign p})
double sine_gordon_kink(double p, int sign = 1);
double sine_gordon_kink_derivative(double p, int sign = 1);
double sine_gordon_kink_second_derivative(double p, int sign = 1);
// |q'' - sin q|
double sine_gordon_residual(double p, int sign = 1);

// max interior |eta_yy + eps (eta_x + 6 eta eta_p + eta_ppp)_p| with axes (x, y, p).
double solitonic_residual_3d(const GridField& eta, int eps, const StencilConfig& cfg, std::span<const int> margin);

// ---- Einstein-type ansatz ---------------------------------------------------

// 2+2 form with horizontal (x2, x3) and vertical (v, y5).
struct EinsteinAnsatzSpec {
  std::array<int, 4> eps{1, 1, 1, 1};
  Fn2 g2, g3;
  Fn3 f;  // (x2, x3, v)
  Fn2 h0, f0;
  std::array<Fn2, 2> n1, n2;  // n_{k[1]}, n_{k[2]}
  Fn3 h_lambda;
  Fn2 v_lambda;
  Fn2 sigma0;  // varsigma_{4[0]}
};

struct BlockResiduals {
  double h = 0.0;   // max |R^i_j - vlambda delta|
  double v = 0.0;   // max |R^a_b - hlambda delta|
  double hv = 0.0;  // max |R_ia|
  double vh = 0.0;  // max |R_ai|
};

struct EinsteinAnsatz {
  DMetricField d;
  NConnectionField nc;
  GridField sigma4;
  BlockResiduals residuals;
};
// Residuals are taken over nodes at least margin[axis] from the window edges
// (default: two stencil reaches on every axis).
EinsteinAnsatz build_einstein_ansatz(const EinsteinAnsatzSpec& spec, const ChartSpec& chart,
                                     const StencilConfig& cfg = {}, std::span<const int> margin = {});

// ---- solitonic 4d metrics ---------------------------------------------------

struct Solitonic4dSpec {
  Fn2 psi;                         // (x, y)
  Fn2 b_breve;                     // (x, y)
  Fn1 k;                           // k(p)
  int q_sign = 1;
  double h0 = 2.0;
  std::array<Fn2, 2> sn;           // _s n_2, _s n_3
  std::array<Fn1, 2> rn;           // _r n_2, _r n_3 as functions of chi
  std::array<Fn1, 2> rn_rate;      // their chi-derivatives
  Fn1 b_r;
  double lambda = 0.0;
};

struct Solitonic4d {
  DMetricField d;  // axes (x, y | p, v)
  NConnectionField nc;
  // psi equation, phi line, w-compatibility, n line
  std::array<double, 4> residuals{};
  // 2 lambda + b (qk)^2 sn_a drn_a/dchi for a = 2, 3
  std::array<double, 2> lambda_relation{};
};
Solitonic4d build_solitonic_4d(const Solitonic4dSpec& spec, double chi, const ChartSpec& chart,
                               const StencilConfig& cfg = {}, std::span<const int> margin = {});

// ---- Lagrange geometrization ------------------------------------------------

using LagrangianFn = std::function<HyperDual(std::span<const HyperDual> x, std::span<const HyperDual> y)>;

struct LagrangeModel {
  GridField L;
  GridField Lg;  // 1/2 d^2 L / dy dy, n x n
  GridField G;   // spray, n components
  NConnectionField N;
  DMetricField sasaki;
};
LagrangeModel lagrange_geometrize(const LagrangianFn& L, const ChartSpec& chart, double fd_step = 1e-3);

// Spray G^a at one point, exact up to roundoff in the Lagrangian's derivatives.
std::vector<double> lagrange_spray(const LagrangianFn& L, std::span<const double> x, std::span<const double> y);

}  // namespace nhflow
