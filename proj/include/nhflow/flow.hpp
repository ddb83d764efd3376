#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>

#include "nhflow/connections.hpp"
#include "nhflow/grid.hpp"
#include "nhflow/nconnection.hpp"

namespace nhflow {

struct FlowState {
  DMetricField d;
  NConnectionField nc;
  GridField f;  // scalar potential, carried unchanged by the metric-only steppers
  double chi = 0.0;
  double tau = 1.0;

  static FlowState from(DMetricField d, NConnectionField nc, double tau = 1.0);
  const ChartSpec& chart() const { return d.chart(); }
};

enum class Scheme { Euler, RK4 };

// Explicit time term in the potential equation.
//   Conserving: (n+m)/(2 tau), keeps the normalization integral constant.
//   Printed:    (n+m)/tau.
//   None:       no term (the F-gradient flow).
enum class PotentialTimeTerm { Conserving, Printed, None };

// Prescribed N(chi) and its chi-derivative.
struct NSchedule {
  std::function<NConnectionField(double chi)> value;
  std::function<NConnectionField(double chi)> rate;
  explicit operator bool() const { return static_cast<bool>(value); }
};

struct FlowConfig {
  double lambda = 0.0;
  double dt = 1e-3;
  int steps = 1;
  Scheme scheme = Scheme::RK4;
  bool evolve_N = false;
  StencilConfig stencil{};
  NSchedule schedule{};
  PotentialTimeTerm time_term = PotentialTimeTerm::Conserving;
  double det_threshold = 1e-8;
  // Called on every intermediate and final state; may overwrite values
  // (prescribed boundary data on windowed charts).
  std::function<void(FlowState&)> boundary{};

  void validate() const;
};

// Metric degeneration or tau reaching zero; carries the last valid state.
class FlowHalted : public std::runtime_error {
 public:
  FlowHalted(const std::string& what, FlowState last);
  const FlowState& last_state() const { return *last_; }
  double chi() const { return last_->chi; }

 private:
  std::shared_ptr<const FlowState> last_;
};

FlowState flow_step_nadapted(const FlowState& s, const FlowConfig& cfg);
FlowState flow_step_coordinate(const FlowState& s, const FlowConfig& cfg);
FlowState coupled_flow_step(const FlowState& s, const FlowConfig& cfg);

// Right-hand sides, exposed for tests and diagnostics.
struct MetricRate {
  GridField h;
  GridField v;
};
MetricRate nadapted_rate(const FlowState& s, const FlowConfig& cfg);
MetricRate coordinate_rate(const FlowState& s, const FlowConfig& cfg);
GridField potential_rate(const FlowState& s, const FlowConfig& cfg);

// Coupled flow over cfg.steps steps of cfg.dt. The metric and tau advance
// forward in half steps; the potential equation is a backward heat equation, so
// the potential is integrated backward from f_end at the final chi. Element k
// holds the state at start.chi + k dt. lambda is ignored. With normalize_end the
// terminal potential is shifted to unit normalization on the final metric.
std::vector<FlowState> coupled_trajectory(const FlowState& start, const GridField& f_end, const FlowConfig& cfg,
                                          bool normalize_end = false);

// 0.2 h^2 / max|R|, the heuristic step bound.
double suggested_dt(const FlowState& s, const StencilConfig& cfg);

struct FlowDiagnostics {
  double chi = 0.0;
  double tau = 0.0;
  double hR_min = 0.0, hR_max = 0.0;
  double vR_min = 0.0, vR_max = 0.0;
  double R_ia_max = 0.0, R_ai_max = 0.0;
  double det_h_min = 0.0, det_h_max = 0.0;
  double det_v_min = 0.0, det_v_max = 0.0;
};
FlowDiagnostics diagnostics(const FlowState& s, const StencilConfig& cfg, std::span<const int> margin = {});

// Steps cfg.steps times with the chosen stepper, calling observe after each step.
enum class Stepper { NAdapted, Coordinate, Coupled };
FlowState run_flow(FlowState s, const FlowConfig& cfg, Stepper stepper,
                   const std::function<void(const FlowState&)>& observe = {});

struct FrameEvolution {
  FrameMatrices frames;
  double drift = 0.0;  // max |metric from frames - (g + 2 dt R_sym)| over nodes
};
FrameEvolution frame_evolution_step(const FrameMatrices& frames, const RicciData& ricci, const DMetricField& d,
                                    double dt);

struct SolitonSpec {
  GridField phi;
  double h_lambda0 = 0.0;
  double v_lambda0 = 0.0;
};
struct SolitonResidual {
  double h = 0.0;
  double v = 0.0;
};
// max |R_ij + D_i D_j phi - 2 hlambda0 g_ij| and the v analogue.
SolitonResidual soliton_residual(const FlowState& s, const SolitonSpec& spec, const StencilConfig& cfg,
                                 std::span<const int> margin = {});

struct HomotheticFactors {
  double rho_h2 = 1.0;
  double rho_v2 = 1.0;
  std::optional<double> shrink_h;  // chi = 1 / (2 hlambda0) when hlambda0 > 0
  std::optional<double> shrink_v;
};
HomotheticFactors homothetic_reference(double chi, double h_lambda0, double v_lambda0);

}  // namespace nhflow
