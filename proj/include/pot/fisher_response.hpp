#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pot/calibration.hpp"
#include "pot/grids_coupling.hpp"
#include "pot/perturbations.hpp"

namespace pot {

// Ordering of the reduced sufficient statistics: indicators of s1, v and s2 with one state dropped per block,
// then (M_n, C_n) pairs for every node but one. M_n = (s2 - s1) 1_n, C_n = (L - v^2 - basis) 1_n.
struct StatisticLayout {
  std::size_t n1 = 0, nv = 0, n2 = 0;
  std::size_t drop1 = 0, dropv = 0, drop2 = 0;
  bool constraint_stats = false;
  std::size_t drop_node = 0;

  std::size_t indicators() const { return n1 + nv + n2 - 3; }
  std::size_t node_pairs() const { return constraint_stats ? n1 * nv - 1 : 0; }
  std::size_t dim() const { return indicators() + 2 * node_pairs(); }

  // Reduced position of a state, or -1 when it is the dropped one.
  long s1_pos(std::size_t i) const { return i == drop1 ? -1 : static_cast<long>(i < drop1 ? i : i - 1); }
  long v_pos(std::size_t j) const {
    return j == dropv ? -1 : static_cast<long>(n1 - 1 + (j < dropv ? j : j - 1));
  }
  long s2_pos(std::size_t k) const {
    return k == drop2 ? -1 : static_cast<long>(n1 + nv - 2 + (k < drop2 ? k : k - 1));
  }
  // Position of M_n; C_n follows it.
  long node_pos(std::size_t n) const {
    if (!constraint_stats || n == drop_node) return -1;
    return static_cast<long>(indicators() + 2 * (n < drop_node ? n : n - 1));
  }
};

struct FisherOptions {
  bool constraint_stats = true;
  double lambda = 0.0;
  // With lambda = 0, a singular system retries once at 1e-12 * trace(H) / n.
  bool escalate = true;
  Exec exec = Exec::parallel;
};

// H = Cov(T) under the calibrated coupling, solved by block elimination over the node statistics plus a
// rank-one correction for the mean.
class FisherSystem {
 public:
  static FisherSystem build(const Coupling& mu, const FisherOptions& options = {});

  const StatisticLayout& layout() const { return layout_; }
  std::size_t dim() const { return layout_.dim(); }
  double lambda() const { return lambda_; }
  const Eigen::VectorXd& means() const { return mean_; }
  double trace() const;

  // (H + lambda I) x
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  // (H + lambda I)^{-1} r, optionally followed by steps of iterative refinement.
  Eigen::VectorXd solve(const Eigen::VectorXd& r, int refine = 0) const;
  // Dense H (without lambda), built by accumulating per-state outer products.
  Eigen::MatrixXd dense() const;

 private:
  Eigen::VectorXd solve_once(const Eigen::VectorXd& r) const;
  Eigen::VectorXd solve_second_moment(const Eigen::VectorXd& r) const;
  bool factorize(double lambda);

  StatisticLayout layout_;
  GridSpec grid_;
  std::vector<double> mass_;
  double lambda_ = 0.0;
  Eigen::MatrixXd a_;            // E[T_I T_I^T]
  Eigen::MatrixXd b_;            // E[T_I T_N^T]
  std::vector<double> d_;        // 2x2 node blocks, row-major, 4 per pair
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;        // Jacobi scaling of the Schur complement
  Eigen::LLT<Eigen::MatrixXd> schur_;
  std::vector<double> dinv_;     // inverses of d + lambda I
  Eigen::VectorXd z_;            // (E + lambda I)^{-1} mean
  double sm_denominator_ = 1.0;  // 1 - mean^T z
};

// Builds the Fisher system for the model's coupling and caches it on the model.
void attach_fisher(CalibratedModel& model, double lambda = 0.0);
const FisherSystem& fisher_of(const CalibratedModel& model);

// fisher_matrix of a coupling with indicator statistics only.
FisherSystem fisher_matrix(const Coupling& mu);

// g_a = Cov(G, T_a) in reduced coordinates.
Eigen::VectorXd covariance_vector(const Coupling& mu, const StatisticLayout& layout, std::span<const double> payoff,
                                  Exec exec = Exec::parallel);

// Reduced right-hand side: kept indicator entries of h, zero on the constraint rows.
// Throws InputError when a block does not sum to zero.
Eigen::VectorXd reduce_perturbation(const StatisticLayout& layout, const PerturbationVector& h);

Eigen::VectorXd solve_response(const FisherSystem& fisher, const Eigen::VectorXd& h);

double lr_sensitivity(const CalibratedModel& model, std::span<const double> payoff, const PerturbationVector& h);

struct InfluenceFunction {
  std::vector<double> psi1;
  std::vector<double> psiv;
  std::vector<double> psi2;
  std::vector<double> psi_constraints;  // (M, C) per node, dropped node zero

  double pair(const PerturbationVector& h) const;
};

InfluenceFunction influence_function(const CalibratedModel& model, std::span<const double> payoff);

// One solve per scenario, then E[G phi] per payoff with phi = sum_a thetadot_a (T_a - E T_a).
class LinearResponse {
 public:
  LinearResponse(const CalibratedModel& model, const PerturbationVector& h);
  double sensitivity(std::span<const double> payoff) const;
  const Eigen::VectorXd& theta_dot() const { return theta_; }

 private:
  const CalibratedModel* model_;
  Eigen::VectorXd theta_;
  std::vector<double> weighted_field_;  // mu * phi
};

struct SecondOrderRow {
  double epsilon = 0.0;
  double value = 0.0;
  double remainder = 0.0;
  double normalized = 0.0;    // remainder / eps^2
  double coupling_l1 = 0.0;   // ||mu_eps - mu*||_1
  double lipschitz = 0.0;     // coupling_l1 / eps
};

struct SecondOrderTable {
  double value0 = 0.0;
  double derivative = 0.0;
  std::vector<SecondOrderRow> rows;
  // remainder(eps_i) / remainder(eps_{i+1}) for consecutive entries
  std::vector<double> remainder_ratios;
  std::vector<double> lipschitz_ratios;
};

// Remainder table with Pi(eps) from a recalibration callback.
SecondOrderTable second_order_check(const CalibratedModel& model, std::span<const double> payoff, double derivative,
                                    const std::vector<double>& eps_list,
                                    const std::function<CalibratedModel(double)>& recalibrated);

// Convenience: bumps the model snapshot along the bump and recalibrates at each eps.
SecondOrderTable second_order_check(const CalibratedModel& model, std::span<const double> payoff,
                                    const BumpSpec& spec, const std::vector<double>& eps_list);

}  // namespace pot
