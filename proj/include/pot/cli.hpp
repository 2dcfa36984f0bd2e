#pragma once

#include <string>
#include <vector>

#include "pot/calibration.hpp"
#include "pot/payoffs.hpp"
#include "pot/perturbations.hpp"

namespace pot {

enum class RiskMethod { lr, dr, recalib };

RiskMethod risk_method_from_string(const std::string& s);
const char* to_string(RiskMethod m);

struct RiskRow {
  std::string payoff;
  std::string scenario;
  RiskMethod method = RiskMethod::lr;
  double pi0 = 0.0;
  double sensitivity = 0.0;
  double wall_ms = 0.0;  // the scenario's method time split evenly over its payoffs
};

struct RiskTiming {
  double prepare_ms = 0.0;   // Fisher build or disintegration, once per model
  double scenario_ms = 0.0;  // assembly of the perturbation vectors (LR and DR only)
  double method_ms = 0.0;    // sum over scenarios of the method time
};

// Sensitivities of every payoff under every scenario. LR and DR start from the assembled perturbation vector;
// recalibration bumps the snapshot by +-size and recalibrates (central difference). The model must carry its
// snapshot. LR attaches a Fisher system when the model has none.
std::vector<RiskRow> compute_risk(CalibratedModel& model, const std::vector<BumpSpec>& scenarios,
                                  const std::vector<PayoffSpec>& payoffs, RiskMethod method,
                                  double fisher_lambda = 0.0, RiskTiming* timing = nullptr);

std::string risk_csv(const std::vector<RiskRow>& rows);

// Entry point of the command-line tool. Returns the process exit code: 0 success, 1 numerical failure,
// 2 input error.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace pot
