#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pot/calibration.hpp"
#include "pot/grids_coupling.hpp"
#include "pot/market_model.hpp"

namespace pot {

enum class BumpKind { spot, vol_t1, vol_t2, vol_parallel };

BumpKind bump_kind_from_string(const std::string& s);
std::string to_string(BumpKind kind);
bool bumps_t1(BumpKind kind);

struct SsrParams {
  double ssr = 1.2;
  double bandwidth = 0.025;  // relative to F_V
  bool convexity = false;    // reserved; the shift is always parallel
  std::optional<double> lower_cutoff;  // strikes outside [lower, upper] keep their vols
  std::optional<double> upper_cutoff;

  void validate() const;
};

struct BumpSpec {
  std::string id = "scenario";
  BumpKind kind = BumpKind::spot;
  double size = 1e-3;
  SsrParams ssr;
};

// Shock direction per unit bump. Each block sums to zero.
struct PerturbationVector {
  std::vector<double> h1;
  std::vector<double> hv;
  std::vector<double> h2;
  // VIX-option rows (Delta - Vega * SSR * Skew) * dF_V at the quoted VIX strikes; informational.
  std::vector<double> constraint_strikes;
  std::vector<double> constraint_bumps;
  std::string scenario_id;
  BumpKind kind = BumpKind::spot;
  double epsilon = 0.0;
  double dfv = 0.0;  // VIX-future move per unit bump

  static PerturbationVector zeros(const GridSpec& grid);
  bool is_zero() const;
};

// Linear-split push-forward of mu1 by delta, as a difference quotient.
std::vector<double> spot_bump_marginal(const MarginalLaw& mu1, double delta);

// (BL(smile + dsigma) - BL(smile)) / dsigma on the grid.
std::vector<double> vol_bump_marginal(const VolSmile& smile, double dsigma, std::span<const double> grid);

// Central difference of the smile over F (1 +- bandwidth).
double atm_skew(const VolSmile& smile, double fv, double bandwidth);

// Parallel shift -ssr * skew * dfv; the returned smile carries forward fv + dfv.
VolSmile ssr_shift_smile(const VolSmile& vix, double fv, double dfv, const SsrParams& params);

// dF_V per unit bump: d(forward variance) / (strip delta * v_scale^2).
double vix_future_sensitivity(const MarketSnapshot& snapshot, BumpKind kind, double v_scale = 0.01);

// (BL(shifted) - BL(base)) / eps on the VIX grid.
std::vector<double> perturbed_vix_marginal(const VolSmile& base, const VolSmile& shifted, double eps,
                                           std::span<const double> vgrid);

// Market after a bump of size eps: spot and forwards or SPX vols move by eps, F_V by eps * dF_V/dbump,
// and the VIX smile by the SSR rule.
MarketSnapshot bump_market(const MarketSnapshot& snapshot, const BumpSpec& spec, double eps, double v_scale = 0.01);

// Two aggregate rows of the linearized constraints: martingale and log-contract identities.
std::array<double, 2> constraint_rows(const GridSpec& grid, const PerturbationVector& h);

// Oblique projection onto the kernel of the aggregate rows, moving h2 along mu2 (s2 - E s2) and
// mu2 (ln s2 - E ln s2).
PerturbationVector tangent_project(const PerturbationVector& h, const GridSpec& grid, const MarginalLaw& mu2);
PerturbationVector tangent_project(const PerturbationVector& h, const CalibratedModel& model);

// Derivative of the calibration targets along the bump, tangent-projected.
PerturbationVector assemble_scenario(const GridSpec& grid, const Targets& base_targets, const MarketSnapshot& snapshot,
                                     const BumpSpec& spec, double fd_step = 1e-5);
PerturbationVector assemble_scenario(const CalibratedModel& model, const MarketSnapshot& snapshot,
                                     const BumpSpec& spec, double fd_step = 1e-5);

}  // namespace pot
