#pragma once

#include <span>
#include <vector>

#include "pot/calibration.hpp"
#include "pot/grids_coupling.hpp"
#include "pot/perturbations.hpp"

namespace pot {

struct ReducedTargets {
  MarginalLaw s1;
  MarginalLaw v;
};

struct ReducedProjection {
  ReducedCoupling gamma;
  int sweeps = 0;
  double error = 0.0;  // max of the two marginal L1 errors
};

// 2-D IPFP from the prior gamma towards the targets. Throws ProjectionError after max_sweeps.
ReducedProjection reduced_project(const ReducedCoupling& prior, const ReducedTargets& targets, double tol = 1e-10,
                                  int max_sweeps = 200);

// Base (s1, v) marginals moved by eps * (h1, hV). Throws BumpError when a weight turns nonpositive.
ReducedTargets dr_targets(const ReducedCoupling& base, const PerturbationVector& h, double eps);

// Disintegration of a coupling cached for repeated perturbations with a frozen kernel.
class DrEngine {
 public:
  explicit DrEngine(const Coupling& mu, Exec exec = Exec::parallel);

  const ReducedCoupling& gamma() const { return gamma_; }
  const ConditionalKernel& kernel() const { return kappa_; }
  const Coupling& base() const { return base_; }

  Coupling perturbed(const ReducedTargets& targets, int* sweeps = nullptr) const;
  Coupling perturbed(const PerturbationVector& h, double eps, int* sweeps = nullptr) const;

  // (P(mu_eps) - P(mu*)) / eps, or the central quotient.
  double greek(std::span<const double> payoff, const PerturbationVector& h, double eps, bool central = false) const;
  // Greeks of several payoffs from one reduced projection per side.
  std::vector<double> greeks(const std::vector<std::vector<double>>& payoffs, const PerturbationVector& h, double eps,
                             bool central = false, int* sweeps = nullptr) const;

 private:
  Coupling base_;
  ReducedCoupling gamma_;
  ConditionalKernel kappa_;
  Exec exec_;
};

Coupling dr_perturbed_coupling(const CalibratedModel& model, const PerturbationVector& h, double eps,
                               int* sweeps = nullptr);
double dr_greek(const CalibratedModel& model, std::span<const double> payoff, const PerturbationVector& h,
                double eps = 1e-3, bool central = false);

}  // namespace pot
