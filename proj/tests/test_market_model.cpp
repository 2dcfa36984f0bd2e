#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pot/errors.hpp"
#include "pot/market_model.hpp"
#include "support.hpp"

using namespace pot;

namespace {

// Oracle normal CDF straight from erfc.
double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

VolSmile flat_smile(double f, double sigma, double t, double lo, double hi, int n) {
  VolSmile s;
  s.expiry = t;
  s.forward = f;
  for (int i = 0; i < n; ++i) {
    s.strikes.push_back(lo + (hi - lo) * i / (n - 1));
    s.vols.push_back(sigma);
  }
  return s;
}

double lognormal_pdf(double k, double f, double sigma, double t) {
  const double sd = sigma * std::sqrt(t);
  const double z = (std::log(k / f) + 0.5 * sd * sd) / sd;
  return std::exp(-0.5 * z * z) / (k * sd * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

TEST(BlackPrice, AtTheMoneyMatchesNormalOracle) {
  const double oracle = 100.0 * (phi(0.1) - phi(-0.1));
  EXPECT_NEAR(black_price(100, 100, 0.2, 1.0, OptionType::call), oracle, 1e-12);
  EXPECT_NEAR(black_price(100, 100, 0.2, 1.0, OptionType::call), 7.9656, 1e-4);
}

TEST(BlackPrice, ZeroVolAtTheMoneyIsZero) { EXPECT_EQ(black_price(100, 100, 0.0, 1.0, OptionType::call), 0.0); }

TEST(BlackPrice, PutCallParityHoldsOnRandomInputs) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> f(50, 150), k(30, 200), s(0.0, 1.5), t(0.01, 3.0);
  for (int i = 0; i < 500; ++i) {
    const double F = f(rng), K = k(rng), S = s(rng), T = t(rng);
    const double c = black_price(F, K, S, T, OptionType::call);
    const double p = black_price(F, K, S, T, OptionType::put);
    EXPECT_GE(c, 0.0);
    EXPECT_GE(p, 0.0);
    EXPECT_NEAR(c - p, F - K, 1e-12 * std::max(F, K));
  }
}

TEST(BlackPrice, NonFiniteInputIsInputError) {
  EXPECT_THROW(black_price(NAN, 100, 0.2, 1.0, OptionType::call), InputError);
  EXPECT_THROW(black_price(100, 100, 0.2, -1.0, OptionType::call), InputError);
}

TEST(ImpliedVol, RoundTripsOnTheNoArbitrageInterior) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> k(60, 160), s(0.05, 1.2), t(0.05, 2.0);
  for (int i = 0; i < 300; ++i) {
    const double K = k(rng), S = s(rng), T = t(rng);
    const OptionType type = i % 2 ? OptionType::call : OptionType::put;
    const double p = black_price(100, K, S, T, type);
    const double iv = implied_vol(p, 100, K, T, type);
    EXPECT_NEAR(black_price(100, K, iv, T, type), p, 1e-10);
    if (p - std::max(type == OptionType::call ? 100 - K : K - 100, 0.0) > 1e-6) EXPECT_NEAR(iv, S, 1e-7);
  }
}

TEST(ImpliedVol, IntrinsicPriceGivesZeroVol) {
  EXPECT_EQ(implied_vol(10.0, 110, 100, 1.0, OptionType::call), 0.0);
  EXPECT_EQ(implied_vol(0.0, 100, 120, 1.0, OptionType::call), 0.0);
}

TEST(ImpliedVol, InvertsTheReferencePrice) { EXPECT_NEAR(implied_vol(7.9656, 100, 100, 1.0, OptionType::call), 0.2, 1e-4); }

TEST(ImpliedVol, OutOfBoundsPriceIsInversionError) {
  EXPECT_THROW(implied_vol(5.0, 110, 100, 1.0, OptionType::call), InversionError);
  EXPECT_THROW(implied_vol(101.0, 100, 100, 1.0, OptionType::call), InversionError);
}

TEST(SmileEval, NodesAndFlatExtrapolation) {
  VolSmile s{0.5, 100, {80, 90, 100, 110, 120}, {0.30, 0.26, 0.22, 0.21, 0.23}};
  for (std::size_t i = 0; i < s.strikes.size(); ++i) EXPECT_EQ(smile_eval(s, s.strikes[i]), s.vols[i]);
  EXPECT_EQ(smile_eval(s, 50), 0.30);
  EXPECT_EQ(smile_eval(s, 500), 0.23);
}

TEST(SmileEval, TwoNodeSegmentIsLinear) {
  // The curve itself accepts two nodes; snapshots require three.
  const SmileCurve c(VolSmile{1.0, 100, {90, 110}, {0.25, 0.15}});
  EXPECT_NEAR(c(100), 0.20, 1e-15);
}

TEST(SmileEval, MonotoneDataStaysMonotone) {
  VolSmile s{0.5, 100, {70, 80, 90, 100, 110, 130}, {0.45, 0.33, 0.27, 0.22, 0.20, 0.19}};
  double prev = 1.0;
  for (double k = 70; k <= 130; k += 0.25) {
    const double v = smile_eval(s, k);
    EXPECT_LE(v, prev + 1e-15);
    prev = v;
  }
}

TEST(BlDensity, FlatSmileMatchesLognormalPdf) {
  const VolSmile s = flat_smile(100, 0.2, 1.0, 20, 400, 5);
  std::vector<double> grid;
  const double h = (300.0 - 30.0) / 199.0;
  for (int i = 0; i < 200; ++i) grid.push_back(30.0 + h * i);
  const MarginalLaw law = bl_density(s, grid);
  double total = 0.0, dev = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    total += law.weights[i];
    EXPECT_GE(law.weights[i], 0.0);
    if (i > 0 && i + 1 < grid.size()) dev = std::max(dev, std::abs(law.weights[i] - lognormal_pdf(grid[i], 100, 0.2, 1) * h));
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_LE(dev, 1e-3);
  EXPECT_NEAR(law.mean(), 100.0, 0.1);
}

TEST(BlDensity, RefinementAtLeastHalvesTheError) {
  const VolSmile s = flat_smile(100, 0.2, 1.0, 20, 400, 5);
  auto error = [&](int n) {
    std::vector<double> grid;
    const double h = (300.0 - 30.0) / (n - 1);
    for (int i = 0; i < n; ++i) grid.push_back(30.0 + h * i);
    const MarginalLaw law = bl_density(s, grid);
    double dev = 0.0;
    // Density error, so that refining compares like with like.
    for (int i = 1; i + 1 < n; ++i) dev = std::max(dev, std::abs(law.weights[i] / h - lognormal_pdf(grid[i], 100, 0.2, 1)));
    return dev;
  };
  const double e1 = error(101), e2 = error(201), e3 = error(401);
  EXPECT_LE(e2, 0.5 * e1);
  EXPECT_LE(e3, 0.5 * e2);
}

TEST(BlDensity, ButterflyArbitrageIsDetected) {
  // A sharp vol spike makes call prices locally concave in strike.
  VolSmile s{0.25, 100, {90, 99, 100, 101, 110}, {0.2, 0.2, 0.9, 0.2, 0.2}};
  std::vector<double> grid;
  for (int i = 0; i < 81; ++i) grid.push_back(80 + 0.5 * i);
  EXPECT_THROW(bl_density(s, grid), ArbitrageError);
}

TEST(LogContractVar, FlatSmileGivesSigmaSquared) {
  const VolSmile s = flat_smile(100, 0.2, 0.5, 50, 150, 21);
  EXPECT_NEAR(log_contract_var(s, StripKind::spx), 0.04, 0.04 * 0.01);
  const VolSmile d = flat_smile(100, 0.4, 0.5, 50, 150, 21);
  EXPECT_NEAR(log_contract_var(d, StripKind::spx) / log_contract_var(s, StripKind::spx), 4.0, 0.04);
}

TEST(LogContractVar, VixStripWithNegligibleVolIsForwardSquared) {
  const VolSmile s = flat_smile(20, 1e-12, 0.1, 10, 40, 7);
  EXPECT_NEAR(log_contract_var(s, StripKind::vix), 400.0, 400.0 * 1e-12);
  // The at-the-money delta is a step; the strip resolves it to half a quadrature cell.
  EXPECT_NEAR(vix_strip_delta(s), 40.0, 40.0 * 1e-6);
}

TEST(LogContractVar, AddingStrikesOnTheCurveChangesLittle) {
  const VolSmile base = synthetic_spx_t1({});
  VolSmile dense = base;
  dense.strikes.clear();
  dense.vols.clear();
  const SmileCurve c(base);
  for (std::size_t i = 0; i + 1 < base.strikes.size(); ++i) {
    dense.strikes.push_back(base.strikes[i]);
    dense.vols.push_back(base.vols[i]);
    const double mid = 0.5 * (base.strikes[i] + base.strikes[i + 1]);
    dense.strikes.push_back(mid);
    dense.vols.push_back(c(mid));
  }
  dense.strikes.push_back(base.strikes.back());
  dense.vols.push_back(base.vols.back());
  EXPECT_NEAR(log_contract_var(dense, StripKind::spx), log_contract_var(base, StripKind::spx), 1e-4);
}

TEST(ForwardVariance, FlatTermStructureAndBasis) {
  MarketSnapshot s;
  s.spot = 100;
  s.t1 = 30.0 / 365.0;
  s.t2 = 60.0 / 365.0;
  s.spx_t1 = flat_smile(100, 0.2, s.t1, 50, 150, 21);
  s.spx_t2 = flat_smile(100, 0.2, s.t2, 50, 150, 21);
  s.vix = flat_smile(20, 0.8, s.t1, 10, 40, 7);
  s.vix_future = 20;
  EXPECT_NEAR(forward_variance(s), 0.04, 1e-6);
  const double base = forward_variance(s);
  s.basis = 0.003;
  EXPECT_NEAR(forward_variance(s) - base, -0.003, 1e-15);
}

TEST(ForwardVariance, TermStructureArithmetic) {
  MarketSnapshot s;
  s.spot = 100;
  s.t1 = 30.0 / 365.0;
  s.t2 = 60.0 / 365.0;
  s.spx_t1 = flat_smile(100, 0.2, s.t1, 50, 150, 21);
  s.spx_t2 = flat_smile(100, 0.22, s.t2, 50, 150, 21);
  s.vix = flat_smile(20, 0.8, s.t1, 10, 40, 7);
  s.vix_future = 20;
  EXPECT_NEAR(forward_variance(s), 0.0568, 1e-6);
}

TEST(MarketSnapshot, ValidationRejectsBadInputs) {
  MarketSnapshot s = fixtures::desk_snapshot();
  s.t2 = s.t1;
  EXPECT_THROW(s.validate(), InputError);
  s = fixtures::desk_snapshot();
  s.vix.vols[2] = -0.1;
  EXPECT_THROW(s.validate(), InputError);
  s = fixtures::desk_snapshot();
  s.vix.strikes.resize(2);
  s.vix.vols.resize(2);
  EXPECT_THROW(s.validate(), InputError);
}
