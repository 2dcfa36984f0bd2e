#include "pot/grids_coupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pot/errors.hpp"

namespace pot {
namespace {

std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) g[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  return g;
}

void check_axis(const std::vector<double>& x, const char* name) {
  if (x.size() < 2) throw InputError(std::string("grid axis ") + name + " needs at least two points");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !std::isfinite(x[i])) throw InputError(std::string("grid axis ") + name + " must be positive");
    if (i > 0 && !(x[i] > x[i - 1])) throw InputError(std::string("grid axis ") + name + " must be increasing");
  }
}

}  // namespace

void GridSpec::validate() const {
  check_axis(s1, "s1");
  check_axis(v, "v");
  check_axis(s2, "s2");
  if (!(tau > 0.0) || !(v_scale > 0.0) || !std::isfinite(basis)) throw InputError("invalid grid constants");
}

void Coupling::validate(double tol) const {
  grid.validate();
  if (mass.size() != grid.size()) throw InputError("coupling size does not match grid");
  double total = 0.0;
  for (double m : mass) {
    if (!(m >= 0.0)) throw InputError("coupling entries must be nonnegative");
    total += m;
  }
  if (std::abs(total - 1.0) > tol) throw InputError("coupling mass is not 1");
}

std::vector<double> ReducedCoupling::row_sums() const {
  std::vector<double> r(n1, 0.0);
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < nv; ++j) r[i] += mass[i * nv + j];
  return r;
}

std::vector<double> ReducedCoupling::col_sums() const {
  std::vector<double> c(nv, 0.0);
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < nv; ++j) c[j] += mass[i * nv + j];
  return c;
}

GridSpec build_grids(const MarketSnapshot& snapshot, const GridConfig& config) {
  snapshot.validate();
  if (config.n1 < 2 || config.nv < 2 || config.n2 < 2) throw InputError("grid sizes must be at least 2");
  if (!(config.coverage > 0.0) || !(config.v_lo > 0.0) || !(config.v_hi > 0.0)) throw InputError("invalid grid coverage");
  const double f = snapshot.spot;
  const double sig1 = SmileCurve(snapshot.spx_t1)(snapshot.spx_t1.forward);
  const double sig2 = SmileCurve(snapshot.spx_t2)(snapshot.spx_t2.forward);
  const double w1 = config.coverage * sig1 * std::sqrt(snapshot.t1);
  // S2 must strictly contain S1 so boundary nodes can carry conditional variance.
  const double w2 = std::max(config.coverage * sig2 * std::sqrt(snapshot.t2), 1.25 * w1);
  const double vmin = config.v_lo * snapshot.vix.strikes.front();
  const double vmax = config.v_hi * snapshot.vix.strikes.back();
  if (!(w1 > 0.0) || !(vmax > vmin)) throw InputError("degenerate smile for grid construction");

  GridSpec g;
  g.s1 = log_spaced(f * std::exp(-w1), f * std::exp(w1), config.n1);
  g.s2 = log_spaced(f * std::exp(-w2), f * std::exp(w2), config.n2);
  g.v.resize(config.nv);
  for (std::size_t j = 0; j < config.nv; ++j)
    g.v[j] = vmin + (vmax - vmin) * static_cast<double>(j) / static_cast<double>(config.nv - 1);
  g.tau = snapshot.tau();
  g.v_scale = config.v_scale;
  g.basis = snapshot.basis;
  g.validate();
  return g;
}

Coupling build_prior(const GridSpec& grid, const MarginalLaw& mu1, const MarginalLaw& muv) {
  grid.validate();
  if (mu1.size() != grid.n1() || muv.size() != grid.nv()) throw InputError("prior marginals do not match grid");
  const std::size_t n2 = grid.n2();
  std::vector<double> cell(n2);
  for (std::size_t k = 0; k < n2; ++k) {
    const double lo = std::log(grid.s2[k > 0 ? k - 1 : k]);
    const double hi = std::log(grid.s2[k + 1 < n2 ? k + 1 : k]);
    cell[k] = 0.5 * (hi - lo);
  }
  Coupling mu{grid, std::vector<double>(grid.size())};
  std::vector<double> q(n2);
  for (std::size_t i = 0; i < grid.n1(); ++i) {
    for (std::size_t j = 0; j < grid.nv(); ++j) {
      const double sd = grid.v[j] * grid.v_scale * std::sqrt(grid.tau);
      double total = 0.0;
      for (std::size_t k = 0; k < n2; ++k) {
        const double z = (std::log(grid.s2[k] / grid.s1[i]) + 0.5 * sd * sd) / sd;
        q[k] = std::max(std::exp(-0.5 * z * z) * cell[k], 1e-300);
        total += q[k];
      }
      const double w = mu1.weights[i] * muv.weights[j] / total;
      for (std::size_t k = 0; k < n2; ++k) mu.mass[grid.index(i, j, k)] = w * q[k];
    }
  }
  const double total = std::accumulate(mu.mass.begin(), mu.mass.end(), 0.0);
  for (double& m : mu.mass) m /= total;
  return mu;
}

Marginals marginals(const Coupling& mu, Exec exec) {
  const GridSpec& g = mu.grid;
  const std::size_t nodes = g.nodes();
  const std::size_t n2 = g.n2();
  const bool par = exec == Exec::parallel;
  std::vector<double> node(nodes);
  const double* m = mu.mass.data();
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t n = 0; n < nodes; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n2; ++k) s += m[n * n2 + k];
    node[n] = s;
  }
  Marginals out;
  out.s1 = {g.s1, std::vector<double>(g.n1(), 0.0)};
  out.v = {g.v, std::vector<double>(g.nv(), 0.0)};
  out.s2 = {g.s2, std::vector<double>(n2, 0.0)};
  for (std::size_t i = 0; i < g.n1(); ++i)
    for (std::size_t j = 0; j < g.nv(); ++j) {
      out.s1.weights[i] += node[i * g.nv() + j];
      out.v.weights[j] += node[i * g.nv() + j];
    }
  double* w2 = out.s2.weights.data();
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t k = 0; k < n2; ++k) {
    double s = 0.0;
    for (std::size_t n = 0; n < nodes; ++n) s += m[n * n2 + k];
    w2[k] = s;
  }
  return out;
}

std::pair<ReducedCoupling, ConditionalKernel> disintegrate(const Coupling& mu) {
  const GridSpec& g = mu.grid;
  const std::size_t n2 = g.n2();
  ReducedCoupling gamma{g.n1(), g.nv(), std::vector<double>(g.nodes())};
  ConditionalKernel kappa{g.n1(), g.nv(), n2, std::vector<double>(g.size())};
  for (std::size_t n = 0; n < g.nodes(); ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n2; ++k) s += mu.mass[n * n2 + k];
    if (!(s > 0.0)) throw NumericalError("zero node mass in disintegration at node " + std::to_string(n));
    gamma.mass[n] = s;
    for (std::size_t k = 0; k < n2; ++k) kappa.prob[n * n2 + k] = mu.mass[n * n2 + k] / s;
  }
  return {std::move(gamma), std::move(kappa)};
}

Coupling recompose(const GridSpec& grid, const ReducedCoupling& gamma, const ConditionalKernel& kappa) {
  if (gamma.n1 != grid.n1() || gamma.nv != grid.nv() || kappa.n1 != grid.n1() || kappa.nv != grid.nv() ||
      kappa.n2 != grid.n2() || gamma.mass.size() != grid.nodes() || kappa.prob.size() != grid.size())
    throw InputError("recompose shape mismatch");
  Coupling mu{grid, std::vector<double>(grid.size())};
  const std::size_t n2 = grid.n2();
  for (std::size_t n = 0; n < grid.nodes(); ++n)
    for (std::size_t k = 0; k < n2; ++k) mu.mass[n * n2 + k] = gamma.mass[n] * kappa.prob[n * n2 + k];
  return mu;
}

double expectation(const Coupling& mu, std::span<const double> payoff, Exec exec) {
  if (payoff.size() != mu.mass.size()) throw InputError("payoff is not tabulated on the coupling grid");
  const std::size_t nodes = mu.grid.nodes();
  const std::size_t n2 = mu.grid.n2();
  std::vector<double> part(nodes);
  const double* m = mu.mass.data();
  const double* p = payoff.data();
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (std::size_t n = 0; n < nodes; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n2; ++k) s += m[n * n2 + k] * p[n * n2 + k];
    part[n] = s;
  }
  return std::accumulate(part.begin(), part.end(), 0.0);
}

// Residuals accumulate in extended precision: the martingale terms are in index points, so double
// summation alone leaves ~1e-14 of noise that would mask exact residual inheritance.
std::vector<double> martingale_residual(const Coupling& mu) {
  const GridSpec& g = mu.grid;
  std::vector<double> r(g.nodes());
  for (std::size_t i = 0; i < g.n1(); ++i)
    for (std::size_t j = 0; j < g.nv(); ++j) {
      long double mass = 0.0;
      long double s = 0.0;
      for (std::size_t k = 0; k < g.n2(); ++k) {
        const long double w = mu(i, j, k);
        mass += w;
        s += w * (static_cast<long double>(g.s2[k]) - g.s1[i]);
      }
      r[i * g.nv() + j] = static_cast<double>(s / mass);
    }
  return r;
}

std::vector<double> consistency_residual(const Coupling& mu) {
  const GridSpec& g = mu.grid;
  std::vector<double> r(g.nodes());
  for (std::size_t i = 0; i < g.n1(); ++i)
    for (std::size_t j = 0; j < g.nv(); ++j) {
      const double target = g.var_level(j);
      long double mass = 0.0;
      long double s = 0.0;
      for (std::size_t k = 0; k < g.n2(); ++k) {
        const long double w = mu(i, j, k);
        mass += w;
        s += w * (static_cast<long double>(g.log_payoff(g.s2[k] / g.s1[i])) - target);
      }
      r[i * g.nv() + j] = static_cast<double>(s / mass);
    }
  return r;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("kl divergence size mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    d += p[i] * std::log(p[i] / q[i]);
  }
  return d;
}

double l1_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("l1 distance size mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

}  // namespace pot
