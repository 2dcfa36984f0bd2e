#include "pot/dr_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "pot/errors.hpp"

namespace pot {

namespace {

// E_a[G] - E_b[G] summed as differences, so rounding scales with the move rather than with the price.
double expectation_change(const Coupling& a, const Coupling& b, std::span<const double> payoff, Exec exec) {
  if (payoff.size() != a.mass.size() || payoff.size() != b.mass.size())
    throw InputError("payoff is not tabulated on the coupling grid");
  const std::size_t nodes = a.grid.nodes();
  const std::size_t n2 = a.grid.n2();
  std::vector<double> part(nodes);
  const double* x = a.mass.data();
  const double* y = b.mass.data();
  const double* p = payoff.data();
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (std::size_t n = 0; n < nodes; ++n) {
    double s = 0.0;
    for (std::size_t k = n * n2; k < (n + 1) * n2; ++k) s += (x[k] - y[k]) * p[k];
    part[n] = s;
  }
  return std::accumulate(part.begin(), part.end(), 0.0);
}

}  // namespace

ReducedProjection reduced_project(const ReducedCoupling& prior, const ReducedTargets& targets, double tol,
                                  int max_sweeps) {
  const std::size_t n1 = prior.n1;
  const std::size_t nv = prior.nv;
  if (prior.mass.size() != n1 * nv || targets.s1.size() != n1 || targets.v.size() != nv)
    throw InputError("reduced projection shape mismatch");
  for (double m : prior.mass)
    if (!(m > 0.0)) throw InputError("reduced prior must be strictly positive");
  for (const auto* law : {&targets.s1, &targets.v})
    for (double w : law->weights)
      if (!(w > 0.0)) throw InputError("reduced targets must be strictly positive");

  ReducedProjection out;
  out.gamma = prior;
  std::vector<double>& g = out.gamma.mass;
  auto errors = [&] {
    const auto r = out.gamma.row_sums();
    const auto c = out.gamma.col_sums();
    return std::max(l1_distance(r, targets.s1.weights), l1_distance(c, targets.v.weights));
  };
  out.error = errors();
  while (out.error > tol) {
    if (out.sweeps >= max_sweeps) throw ProjectionError("reduced projection did not converge");
    const auto r = out.gamma.row_sums();
    for (std::size_t i = 0; i < n1; ++i) {
      const double f = targets.s1.weights[i] / r[i];
      for (std::size_t j = 0; j < nv; ++j) g[i * nv + j] *= f;
    }
    const auto c = out.gamma.col_sums();
    for (std::size_t j = 0; j < nv; ++j) {
      const double f = targets.v.weights[j] / c[j];
      for (std::size_t i = 0; i < n1; ++i) g[i * nv + j] *= f;
    }
    ++out.sweeps;
    out.error = errors();
  }
  return out;
}

ReducedTargets dr_targets(const ReducedCoupling& base, const PerturbationVector& h, double eps) {
  if (h.h1.size() != base.n1 || h.hv.size() != base.nv) throw InputError("perturbation does not match the grid");
  ReducedTargets t;
  t.s1.weights = base.row_sums();
  t.v.weights = base.col_sums();
  for (std::size_t i = 0; i < base.n1; ++i) t.s1.weights[i] += eps * h.h1[i];
  for (std::size_t j = 0; j < base.nv; ++j) t.v.weights[j] += eps * h.hv[j];
  for (const auto* w : {&t.s1.weights, &t.v.weights})
    for (double x : *w)
      if (!(x > 0.0)) throw BumpError("perturbed marginal loses positivity; reduce the bump");
  // Grid values are not needed by the projection; keep the laws well-formed.
  t.s1.grid.resize(base.n1);
  t.v.grid.resize(base.nv);
  for (std::size_t i = 0; i < base.n1; ++i) t.s1.grid[i] = static_cast<double>(i + 1);
  for (std::size_t j = 0; j < base.nv; ++j) t.v.grid[j] = static_cast<double>(j + 1);
  return t;
}

DrEngine::DrEngine(const Coupling& mu, Exec exec) : base_(mu), exec_(exec) {
  auto [g, k] = disintegrate(mu);
  gamma_ = std::move(g);
  kappa_ = std::move(k);
}

Coupling DrEngine::perturbed(const ReducedTargets& targets, int* sweeps) const {
  const ReducedProjection p = reduced_project(gamma_, targets);
  if (sweeps) *sweeps = p.sweeps;
  return recompose(base_.grid, p.gamma, kappa_);
}

Coupling DrEngine::perturbed(const PerturbationVector& h, double eps, int* sweeps) const {
  if (eps == 0.0 || h.is_zero()) {
    if (sweeps) *sweeps = 0;
    return base_;
  }
  return perturbed(dr_targets(gamma_, h, eps), sweeps);
}

double DrEngine::greek(std::span<const double> payoff, const PerturbationVector& h, double eps, bool central) const {
  if (!(eps > 0.0)) throw InputError("DR bump must be positive");
  const Coupling up = perturbed(h, eps);
  if (!central) return expectation_change(up, base_, payoff, exec_) / eps;
  const Coupling dn = perturbed(h, -eps);
  return expectation_change(up, dn, payoff, exec_) / (2.0 * eps);
}

std::vector<double> DrEngine::greeks(const std::vector<std::vector<double>>& payoffs, const PerturbationVector& h,
                                     double eps, bool central, int* sweeps) const {
  if (!(eps > 0.0)) throw InputError("DR bump must be positive");
  int s_up = 0, s_dn = 0;
  const Coupling up = perturbed(h, eps, &s_up);
  std::optional<Coupling> dn;
  if (central) dn = perturbed(h, -eps, &s_dn);
  if (sweeps) *sweeps = std::max(s_up, s_dn);
  const Coupling& lo = dn ? *dn : base_;
  const double width = central ? 2.0 * eps : eps;
  std::vector<double> out;
  out.reserve(payoffs.size());
  for (const auto& g : payoffs) out.push_back(expectation_change(up, lo, g, exec_) / width);
  return out;
}

Coupling dr_perturbed_coupling(const CalibratedModel& model, const PerturbationVector& h, double eps, int* sweeps) {
  return DrEngine(model.coupling(), model.config.exec).perturbed(h, eps, sweeps);
}

double dr_greek(const CalibratedModel& model, std::span<const double> payoff, const PerturbationVector& h, double eps,
                bool central) {
  return DrEngine(model.coupling(), model.config.exec).greek(payoff, h, eps, central);
}

}  // namespace pot
