#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pot/grids_coupling.hpp"
#include "pot/market_model.hpp"
#include "pot/parallel.hpp"

namespace pot {

class FisherSystem;

struct CalibConfig {
  double eps_marg = 1e-9;
  double eps_fin = 1e-8;
  double lambda = 1e-10;
  int max_outer = 500;
  int max_inner = 20;
  // Off: pure marginal (multi-marginal Sinkhorn) projection.
  bool enforce_constraints = true;
  Exec exec = Exec::parallel;

  void validate() const;
};

struct Targets {
  MarginalLaw s1;
  MarginalLaw v;
  MarginalLaw s2;
};

// Log-domain dual state. Scalings a = exp(log_a) etc.
struct CalibrationState {
  std::vector<double> log_a;
  std::vector<double> log_b;
  std::vector<double> log_c;
  std::vector<double> delta_m;  // per node i * nv + j
  std::vector<double> delta_c;
  Coupling coupling;
  int outer_iterations = 0;
  long newton_steps = 0;

  static CalibrationState zeros(const GridSpec& grid);
};

struct TraceRow {
  int iteration = 0;
  double marg_err_s1 = 0.0;
  double marg_err_v = 0.0;
  double marg_err_s2 = 0.0;
  double max_abs_rm = 0.0;
  double max_abs_rc = 0.0;
};

struct CalibDiagnostics {
  double marg_err_s1 = 0.0;
  double marg_err_v = 0.0;
  double marg_err_s2 = 0.0;
  double max_abs_rm = 0.0;
  double max_abs_rc = 0.0;
  int outer_iterations = 0;
  long newton_steps = 0;
  double wall_seconds = 0.0;
  std::vector<TraceRow> trace;

  double max_marginal_error() const;
  std::string summary() const;
};

struct CalibratedModel {
  GridSpec grid;
  Targets prior_marginals;  // laws that define the fixed prior
  std::vector<double> log_prior;
  Targets targets;
  CalibrationState state;
  CalibConfig config;
  CalibDiagnostics diagnostics;
  std::optional<MarketSnapshot> snapshot;
  std::shared_ptr<const FisherSystem> fisher;

  const Coupling& coupling() const { return state.coupling; }
};

// Precomputed per-node feature rows: fM(i,k) = s2_k - s1_i and fC(i,j,k) = L(s2_k/s1_i) - v_j^2 - basis.
class ConstraintFeatures {
 public:
  explicit ConstraintFeatures(const GridSpec& grid);
  double fm(std::size_t i, std::size_t k) const { return fm_[i * n2_ + k]; }
  double fc(std::size_t i, std::size_t j, std::size_t k) const { return lg_[i * n2_ + k] - level_[j]; }
  std::span<const double> fm_row(std::size_t i) const { return {fm_.data() + i * n2_, n2_}; }
  std::span<const double> log_row(std::size_t i) const { return {lg_.data() + i * n2_, n2_}; }
  double level(std::size_t j) const { return level_[j]; }

 private:
  std::size_t n2_;
  std::vector<double> fm_;
  std::vector<double> lg_;
  std::vector<double> level_;
};

// Normalized Gibbs map mu ~ prior * a * b * c * exp{dM fM + dC fC}, evaluated in the log domain.
Coupling gibbs_coupling(const GridSpec& grid, std::span<const double> log_prior, const CalibrationState& state,
                        Exec exec = Exec::parallel);

// Entropic dual objective for the current state (targets on the marginal rows, zero on constraint rows).
double dual_objective(const GridSpec& grid, std::span<const double> log_prior, const CalibrationState& state,
                      const Targets& targets);

// Updates a, then b, then c and refreshes the coupling cache.
void sinkhorn_sweep(CalibrationState& state, const Targets& targets, Exec exec = Exec::parallel);

struct NodeResult {
  double residual_before = 0.0;
  double residual_after = 0.0;
  int steps = 0;
};

// Damped 2x2 Newton/LM enforcement of both constraints at one (s1, v) node.
NodeResult newton_node_update(CalibrationState& state, const ConstraintFeatures& features, std::size_t node,
                              const CalibConfig& config);

// Newton pass over every node. Returns the max residual norm after the pass.
double newton_pass(CalibrationState& state, const ConstraintFeatures& features, const CalibConfig& config);

// Raw Breeden-Litzenberger targets on the grid.
Targets extract_targets(const MarketSnapshot& snapshot, const GridSpec& grid);

// Tilts mu2 by exp(alpha s2 + beta ln s2) so the aggregate martingale and variance identities hold exactly.
Targets reconcile_targets(const GridSpec& grid, const Targets& raw);

CalibratedModel calibrate_targets(const GridSpec& grid, const Targets& prior_marginals, const Targets& targets,
                                  const CalibConfig& config, const CalibrationState* warm = nullptr);

CalibratedModel calibrate(const MarketSnapshot& snapshot, const GridConfig& grid_config, const CalibConfig& config);

// Warm-started from the model state on the model's grids and prior.
CalibratedModel recalibrate(const CalibratedModel& model, const MarketSnapshot& bumped);
CalibratedModel recalibrate_targets(const CalibratedModel& model, const Targets& targets);

// Rebuilds the coupling cache from the stored state (used after deserialization).
void refresh_coupling(CalibratedModel& model);

// Market vs model option prices at the quoted strikes (OTM side for SPX, calls for VIX). Errors are relative to
// the forward of the expiry.
struct SmileFitRow {
  std::string instrument;  // spx_t1, spx_t2 or vix
  double strike = 0.0;
  std::string type;        // call or put
  double market = 0.0;
  double model = 0.0;
  double error = 0.0;      // |model - market| / forward
};

std::vector<SmileFitRow> smile_fit(const Coupling& mu, const MarketSnapshot& snapshot);

}  // namespace pot
