#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "pot/market_model.hpp"
#include "pot/parallel.hpp"

namespace pot {

inline constexpr double kDefaultTau = 30.0 / 365.0;

// State spaces plus the constants shared by the constraint functionals.
struct GridSpec {
  std::vector<double> s1;
  std::vector<double> v;
  std::vector<double> s2;
  double tau = kDefaultTau;
  // VIX levels are quoted in index points; v * v_scale is a decimal vol.
  double v_scale = 0.01;
  double basis = 0.0;

  std::size_t n1() const { return s1.size(); }
  std::size_t nv() const { return v.size(); }
  std::size_t n2() const { return s2.size(); }
  std::size_t nodes() const { return n1() * nv(); }
  std::size_t size() const { return nodes() * n2(); }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * nv() + j) * n2() + k; }

  // L(x) = -(2/tau) ln x
  double log_payoff(double ratio) const { return -2.0 / tau * std::log(ratio); }
  double var_level(std::size_t j) const {
    const double x = v[j] * v_scale;
    return x * x + basis;
  }
  void validate() const;
};

struct GridConfig {
  std::size_t n1 = 40;
  std::size_t nv = 25;
  std::size_t n2 = 60;
  double coverage = 5.0;
  double v_lo = 0.5;
  double v_hi = 1.5;
  double v_scale = 0.01;
};

// Dense joint law over S1 x V x S2, row-major (i, j, k).
struct Coupling {
  GridSpec grid;
  std::vector<double> mass;

  double operator()(std::size_t i, std::size_t j, std::size_t k) const { return mass[grid.index(i, j, k)]; }
  void validate(double tol = 1e-12) const;
};

struct ReducedCoupling {
  std::size_t n1 = 0;
  std::size_t nv = 0;
  std::vector<double> mass;  // (i, j) row-major

  double operator()(std::size_t i, std::size_t j) const { return mass[i * nv + j]; }
  std::vector<double> row_sums() const;
  std::vector<double> col_sums() const;
};

struct ConditionalKernel {
  std::size_t n1 = 0;
  std::size_t nv = 0;
  std::size_t n2 = 0;
  std::vector<double> prob;  // (i, j, k) row-major; each (i, j) slice sums to 1
};

struct Marginals {
  MarginalLaw s1;
  MarginalLaw v;
  MarginalLaw s2;
};

GridSpec build_grids(const MarketSnapshot& snapshot, const GridConfig& config);

// mu1(s1) * muV(v) * q(s2 | s1, v) with q a discretized lognormal of variance (v v_scale)^2 tau.
Coupling build_prior(const GridSpec& grid, const MarginalLaw& mu1, const MarginalLaw& muv);

Marginals marginals(const Coupling& mu, Exec exec = Exec::parallel);

std::pair<ReducedCoupling, ConditionalKernel> disintegrate(const Coupling& mu);
Coupling recompose(const GridSpec& grid, const ReducedCoupling& gamma, const ConditionalKernel& kappa);

double expectation(const Coupling& mu, std::span<const double> payoff, Exec exec = Exec::parallel);

// Per-node conditional residuals, indexed i * nv + j.
std::vector<double> martingale_residual(const Coupling& mu);
std::vector<double> consistency_residual(const Coupling& mu);

// Sum p log(p / q) over entries with p > 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

double l1_distance(std::span<const double> a, std::span<const double> b);

}  // namespace pot
