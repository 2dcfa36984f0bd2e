#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pot/calibration.hpp"
#include "pot/fisher_response.hpp"
#include "pot/grids_coupling.hpp"

// Naive single-threaded kernels written straight from the defining formulas. They exist to cross-check the
// optimized kernels in tests and benchmarks; dense Fisher assembly is O(|grid| * dim^2) and meant for small grids.
namespace pot::reference {

Coupling gibbs_coupling(const GridSpec& grid, std::span<const double> log_prior, const CalibrationState& state);

Marginals marginals(const Coupling& mu);

double expectation(const Coupling& mu, std::span<const double> payoff);

// Full statistic vector at state (i, j, k) in the layout's reduced coordinates.
Eigen::VectorXd statistics(const GridSpec& grid, const StatisticLayout& layout, std::size_t i, std::size_t j,
                           std::size_t k);

// Cov(T) by two passes over the grid.
Eigen::MatrixXd fisher_dense(const Coupling& mu, const StatisticLayout& layout);

// Cov(G, T) by direct summation.
Eigen::VectorXd covariance_vector(const Coupling& mu, const StatisticLayout& layout, std::span<const double> payoff);

}  // namespace pot::reference
