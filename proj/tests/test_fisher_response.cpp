#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "pot/errors.hpp"
#include "pot/fisher_response.hpp"
#include "pot/payoffs.hpp"
#include "pot/perturbations.hpp"
#include "pot/reference.hpp"
#include "support.hpp"

using namespace pot;

namespace {

const CalibratedModel& desk_with_fisher() {
  static const CalibratedModel m = [] {
    CalibratedModel c = fixtures::desk_model();
    attach_fisher(c);
    return c;
  }();
  return m;
}

const CalibratedModel& small_with_fisher() {
  static const CalibratedModel m = [] {
    CalibratedModel c = fixtures::small_model();
    attach_fisher(c);
    return c;
  }();
  return m;
}

std::vector<double> zero_sum(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (double& x : v) s += (x = z(rng));
  for (double& x : v) x -= s / static_cast<double>(n);
  return v;
}

PerturbationVector random_admissible(const GridSpec& g, std::mt19937_64& rng) {
  PerturbationVector h = PerturbationVector::zeros(g);
  h.h1 = zero_sum(g.n1(), rng);
  h.hv = zero_sum(g.nv(), rng);
  h.h2 = zero_sum(g.n2(), rng);
  return h;
}

std::vector<double> random_payoff(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = z(rng);
  return v;
}

// Reduced indicator statistic of a state, built straight from the layout positions.
Eigen::VectorXd indicator_stat(const StatisticLayout& l, std::size_t i, std::size_t j, std::size_t k) {
  Eigen::VectorXd t = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l.dim()));
  if (l.s1_pos(i) >= 0) t(l.s1_pos(i)) = 1.0;
  if (l.v_pos(j) >= 0) t(l.v_pos(j)) = 1.0;
  if (l.s2_pos(k) >= 0) t(l.s2_pos(k)) = 1.0;
  return t;
}

}  // namespace

TEST(FisherMatrix, HandCouplingMatchesEightStateCovariance) {
  const Coupling mu = fixtures::hand_coupling();
  const FisherSystem fs = fisher_matrix(mu);
  const StatisticLayout& l = fs.layout();
  ASSERT_EQ(fs.dim(), 3u);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(3, 3);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) {
        const Eigen::VectorXd t = indicator_stat(l, i, j, k);
        mean += mu(i, j, k) * t;
        second += mu(i, j, k) * t * t.transpose();
      }
  const Eigen::MatrixXd oracle = second - mean * mean.transpose();
  EXPECT_LE((fs.dense() - oracle).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((reference::fisher_dense(mu, l) - oracle).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FisherMatrix, BernoulliDiagonalAndIndependentBlocks) {
  const GridSpec g = fixtures::make_grid({1, 2, 3}, {1, 2, 3}, {1, 2, 3, 4});
  const std::vector<double> a{0.2, 0.3, 0.5}, b{0.1, 0.6, 0.3}, c{0.4, 0.3, 0.2, 0.1};
  Coupling mu{g, std::vector<double>(g.size())};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) mu.mass[g.index(i, j, k)] = a[i] * b[j] * c[k];
  const FisherSystem fs = fisher_matrix(mu);
  const StatisticLayout& l = fs.layout();
  const Eigen::MatrixXd h = fs.dense();
  for (std::size_t i = 0; i < 3; ++i)
    if (const long p = l.s1_pos(i); p >= 0) {
      EXPECT_NEAR(h(p, p), a[i] * (1 - a[i]), 1e-15);
      for (std::size_t j = 0; j < 3; ++j)
        if (const long q = l.v_pos(j); q >= 0) EXPECT_NEAR(h(p, q), 0.0, 1e-15);
      for (std::size_t k = 0; k < 4; ++k)
        if (const long q = l.s2_pos(k); q >= 0) EXPECT_NEAR(h(p, q), 0.0, 1e-15);
    }
}

TEST(FisherMatrix, ThreeByThreeSolveMatchesDenseInverse) {
  const FisherSystem fs = fisher_matrix(fixtures::hand_coupling());
  const Eigen::MatrixXd inv = fs.dense().inverse();
  std::mt19937_64 rng(6);
  for (int t = 0; t < 5; ++t) {
    const Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(random_payoff(3, rng).data(), 3);
    EXPECT_LE((fs.solve(r) - inv * r).cwiseAbs().maxCoeff(), 1e-10 * (inv * r).cwiseAbs().maxCoeff());
  }
}

TEST(FisherSystem, BlockEliminationMatchesReferenceOnSmallModel) {
  const CalibratedModel& m = small_with_fisher();
  const FisherSystem& fs = fisher_of(m);
  const Eigen::MatrixXd ref = reference::fisher_dense(m.coupling(), fs.layout());
  const Eigen::MatrixXd h = fs.dense();
  const double scale = ref.cwiseAbs().maxCoeff();
  EXPECT_LE((h - ref).cwiseAbs().maxCoeff(), 1e-12 * scale);
  EXPECT_LE((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-12 * scale);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ref);
  EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
  // apply() is (H + lambda I) x.
  std::mt19937_64 rng(7);
  const auto x = random_payoff(fs.dim(), rng);
  const Eigen::VectorXd xv = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  EXPECT_LE((fs.apply(xv) - (ref * xv + fs.lambda() * xv)).norm(), 1e-11 * (ref * xv).norm());
}

TEST(FisherSystem, ConstructedSolutionAndResidual) {
  const CalibratedModel& m = small_with_fisher();
  const FisherSystem& fs = fisher_of(m);
  std::mt19937_64 rng(8);
  const auto w = random_payoff(fs.dim(), rng);
  const Eigen::VectorXd wv = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  const Eigen::VectorXd h = fs.apply(wv);
  const Eigen::VectorXd theta = fs.solve(h, 2);
  EXPECT_LE((fs.apply(theta) - h).norm(), 1e-10 * h.norm());
  EXPECT_LE((theta - wv).cwiseAbs().maxCoeff(), 1e-6 * wv.cwiseAbs().maxCoeff());
  EXPECT_EQ(fs.solve(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fs.dim()))).norm(), 0.0);
}

TEST(FisherSystem, DeskResidualWithinTolerance) {
  const CalibratedModel& m = desk_with_fisher();
  const FisherSystem& fs = fisher_of(m);
  std::mt19937_64 rng(9);
  const PerturbationVector h = random_admissible(m.grid, rng);
  const Eigen::VectorXd r = reduce_perturbation(fs.layout(), h);
  const Eigen::VectorXd theta = fs.solve(r, 2);
  EXPECT_LE((fs.apply(theta) - r).norm(), 1e-10 * r.norm());
}

TEST(FisherSystem, RejectsNegativeDampingAndWrongShapes) {
  FisherOptions o;
  o.lambda = -1.0;
  EXPECT_THROW(FisherSystem::build(fixtures::hand_coupling(), o), InputError);
  const FisherSystem fs = fisher_matrix(fixtures::hand_coupling());
  EXPECT_THROW(fs.solve(Eigen::VectorXd::Zero(4)), InputError);
}

TEST(CovarianceVector, ConstantPayoffAndSelfCovariance) {
  const CalibratedModel& m = small_with_fisher();
  const StatisticLayout& l = fisher_of(m).layout();
  const std::vector<double> ones(m.grid.size(), 3.0);
  EXPECT_LE(covariance_vector(m.coupling(), l, ones).cwiseAbs().maxCoeff(), 1e-14);
  // G = T_a reproduces row a of H.
  const Eigen::MatrixXd h = fisher_of(m).dense();
  const long a = l.s1_pos(2);
  std::vector<double> g(m.grid.size(), 0.0);
  for (std::size_t j = 0; j < m.grid.nv(); ++j)
    for (std::size_t k = 0; k < m.grid.n2(); ++k) g[m.grid.index(2, j, k)] = 1.0;
  EXPECT_LE((covariance_vector(m.coupling(), l, g) - h.row(a).transpose()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CovarianceVector, HandCouplingEightTermSum) {
  const Coupling mu = fixtures::hand_coupling();
  const FisherSystem fs = fisher_matrix(mu);
  const StatisticLayout& l = fs.layout();
  std::vector<double> g(8);
  double eg = 0.0;
  for (std::size_t x = 0; x < 8; ++x) {
    g[x] = mu.grid.v[(x / 2) % 2];
    eg += mu.mass[x] * g[x];
  }
  Eigen::VectorXd et = Eigen::VectorXd::Zero(3), oracle = Eigen::VectorXd::Zero(3);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) et += mu(i, j, k) * indicator_stat(l, i, j, k);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) {
        const std::size_t x = mu.grid.index(i, j, k);
        oracle += mu.mass[x] * (g[x] - eg) * (indicator_stat(l, i, j, k) - et);
      }
  EXPECT_LE((covariance_vector(mu, l, g) - oracle).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CovarianceVector, ParallelSerialAndReferenceAgree) {
  const CalibratedModel& m = desk_with_fisher();
  const StatisticLayout& l = fisher_of(m).layout();
  const std::vector<double> g = tabulate({"c", PayoffKind::spx_call_t2, 100.0}, m.grid);
  const Eigen::VectorXd p = covariance_vector(m.coupling(), l, g, Exec::parallel);
  const Eigen::VectorXd s = covariance_vector(m.coupling(), l, g, Exec::serial);
  const Eigen::VectorXd r = reference::covariance_vector(m.coupling(), l, g);
  EXPECT_LE((p - r).cwiseAbs().maxCoeff(), 1e-12 * r.cwiseAbs().maxCoeff());
  EXPECT_LE((s - r).cwiseAbs().maxCoeff(), 1e-12 * r.cwiseAbs().maxCoeff());
}

TEST(LrSensitivity, ZeroForConstantPayoffOrZeroShock) {
  const CalibratedModel& m = desk_with_fisher();
  std::mt19937_64 rng(10);
  const PerturbationVector h = random_admissible(m.grid, rng);
  EXPECT_NEAR(lr_sensitivity(m, std::vector<double>(m.grid.size(), 1.0), h), 0.0, 1e-12);
  const std::vector<double> g = tabulate({"f", PayoffKind::vix_future}, m.grid);
  EXPECT_EQ(lr_sensitivity(m, g, PerturbationVector::zeros(m.grid)), 0.0);
}

TEST(LrSensitivity, InadmissibleShockIsRejected) {
  const CalibratedModel& m = desk_with_fisher();
  PerturbationVector h = PerturbationVector::zeros(m.grid);
  h.h1[0] = 1e-6;
  const std::vector<double> g = tabulate({"f", PayoffKind::vix_future}, m.grid);
  EXPECT_THROW(lr_sensitivity(m, g, h), InputError);
}

TEST(LrSensitivity, InfluencePairingMatchesForRandomShocks) {
  const CalibratedModel& m = desk_with_fisher();
  std::mt19937_64 rng(11);
  for (const PayoffKind kind : {PayoffKind::vix_future, PayoffKind::spx_call_t2, PayoffKind::forward_start_call}) {
    const std::vector<double> g = tabulate({"p", kind, kind == PayoffKind::forward_start_call ? 1.0 : 100.0}, m.grid);
    const InfluenceFunction psi = influence_function(m, g);
    for (int t = 0; t < 10; ++t) {
      const PerturbationVector h = random_admissible(m.grid, rng);
      const double lr = lr_sensitivity(m, g, h);
      EXPECT_NEAR(psi.pair(h), lr, 1e-10 * std::max(1.0, std::abs(lr)));
      EXPECT_NEAR(LinearResponse(m, h).sensitivity(g), lr, 1e-10 * std::max(1.0, std::abs(lr)));
    }
  }
}

TEST(InfluenceFunction, ConstantPayoffAndGaugeOrthogonality) {
  const CalibratedModel& m = desk_with_fisher();
  const InfluenceFunction z = influence_function(m, std::vector<double>(m.grid.size(), 2.0));
  EXPECT_LE(fixtures::max_abs(z.psi1) + fixtures::max_abs(z.psiv) + fixtures::max_abs(z.psi2), 1e-10);
  const InfluenceFunction psi = influence_function(m, tabulate({"f", PayoffKind::vix_future}, m.grid));
  const Marginals mg = marginals(m.coupling());
  double e1 = 0.0, ev = 0.0, e2 = 0.0;
  for (std::size_t i = 0; i < m.grid.n1(); ++i) e1 += mg.s1.weights[i] * psi.psi1[i];
  for (std::size_t j = 0; j < m.grid.nv(); ++j) ev += mg.v.weights[j] * psi.psiv[j];
  for (std::size_t k = 0; k < m.grid.n2(); ++k) e2 += mg.s2.weights[k] * psi.psi2[k];
  EXPECT_NEAR(e1, 0.0, 1e-12);
  EXPECT_NEAR(ev, 0.0, 1e-12);
  EXPECT_NEAR(e2, 0.0, 1e-12);
  for (double x : psi.psiv) EXPECT_TRUE(std::isfinite(x));
}

TEST(InfluenceFunction, HandCouplingAgainstDenseInverse) {
  CalibratedModel m;
  m.grid = fixtures::hand_coupling().grid;
  m.state.coupling = fixtures::hand_coupling();
  m.fisher = std::make_shared<const FisherSystem>(fisher_matrix(m.state.coupling));
  const StatisticLayout& l = m.fisher->layout();
  std::vector<double> g(8);
  for (std::size_t x = 0; x < 8; ++x) g[x] = m.grid.s2[x % 2] - m.grid.s1[x / 4];
  const Eigen::VectorXd psi_red = m.fisher->dense().inverse() * reference::covariance_vector(m.coupling(), l, g);
  const InfluenceFunction psi = influence_function(m, g);
  // Reduced entries are differences from the dropped state.
  for (std::size_t i = 0; i < 2; ++i)
    if (const long p = l.s1_pos(i); p >= 0) EXPECT_NEAR(psi.psi1[i] - psi.psi1[l.drop1], psi_red(p), 1e-12);
  for (std::size_t k = 0; k < 2; ++k)
    if (const long p = l.s2_pos(k); p >= 0) EXPECT_NEAR(psi.psi2[k] - psi.psi2[l.drop2], psi_red(p), 1e-12);
}

TEST(LrSensitivity, BilinearAndSymmetric) {
  const CalibratedModel& m = desk_with_fisher();
  const FisherSystem& fs = fisher_of(m);
  std::mt19937_64 rng(12);
  const std::vector<double> g1 = tabulate({"a", PayoffKind::vix_call, 20.0}, m.grid);
  const std::vector<double> g2 = tabulate({"b", PayoffKind::spx_put_t2, 95.0}, m.grid);
  const PerturbationVector h1 = random_admissible(m.grid, rng), h2 = random_admissible(m.grid, rng);
  std::vector<double> gsum(g1.size());
  for (std::size_t x = 0; x < g1.size(); ++x) gsum[x] = 2.0 * g1[x] - 0.5 * g2[x];
  PerturbationVector hsum = h1;
  for (std::size_t i = 0; i < hsum.h1.size(); ++i) hsum.h1[i] = 3.0 * h1.h1[i] + h2.h1[i];
  for (std::size_t j = 0; j < hsum.hv.size(); ++j) hsum.hv[j] = 3.0 * h1.hv[j] + h2.hv[j];
  for (std::size_t k = 0; k < hsum.h2.size(); ++k) hsum.h2[k] = 3.0 * h1.h2[k] + h2.h2[k];
  const double a = lr_sensitivity(m, g1, h1), b = lr_sensitivity(m, g2, h1);
  EXPECT_NEAR(lr_sensitivity(m, gsum, h1), 2.0 * a - 0.5 * b, 1e-10 * (std::abs(a) + std::abs(b) + 1));
  const double c = lr_sensitivity(m, g1, h2);
  EXPECT_NEAR(lr_sensitivity(m, g1, hsum), 3.0 * a + c, 1e-10 * (std::abs(a) + std::abs(c) + 1));
  // g^T (H^-1 h) = (H^-1 g)^T h
  const Eigen::VectorXd gv = covariance_vector(m.coupling(), fs.layout(), g1);
  const Eigen::VectorXd hv = reduce_perturbation(fs.layout(), h1);
  const double left = gv.dot(fs.solve(hv, 2)), right = fs.solve(gv, 2).dot(hv);
  EXPECT_NEAR(left, right, 1e-10 * std::max(1.0, std::abs(left)));
}

TEST(LrSensitivity, MatchesRecalibrationOnTheVixFuture) {
  const CalibratedModel& m = desk_with_fisher();
  BumpSpec spec;
  spec.kind = BumpKind::vol_parallel;
  const double eps = 1e-3;
  const std::vector<double> g = tabulate({"f", PayoffKind::vix_future}, m.grid);
  const double lr = LinearResponse(m, assemble_scenario(m, *m.snapshot, spec)).sensitivity(g);
  const double up = expectation(recalibrate(m, bump_market(*m.snapshot, spec, eps)).coupling(), g);
  const double dn = expectation(recalibrate(m, bump_market(*m.snapshot, spec, -eps)).coupling(), g);
  const double fd = (up - dn) / (2 * eps);
  EXPECT_LE(fixtures::rel_err(lr, fd), 0.03) << "LR " << lr << " FD " << fd;
}

TEST(SecondOrderCheck, RemainderScalesQuadratically) {
  const CalibratedModel& m = desk_with_fisher();
  BumpSpec spec;
  spec.kind = BumpKind::vol_parallel;
  const std::vector<double> g = tabulate({"c", PayoffKind::spx_call_t2, 100.0}, m.grid);
  const SecondOrderTable t = second_order_check(m, g, spec, {0.0, 4e-3, 2e-3, 1e-3});
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.rows[0].remainder, 0.0);
  ASSERT_EQ(t.remainder_ratios.size(), 2u);
  EXPECT_NEAR(t.remainder_ratios[1], 4.0, 1.0);
  for (double r : t.lipschitz_ratios) EXPECT_NEAR(r, 1.0, 0.25);
}
