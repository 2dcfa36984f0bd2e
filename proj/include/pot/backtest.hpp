#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "pot/calibration.hpp"
#include "pot/grids_coupling.hpp"
#include "pot/market_model.hpp"
#include "pot/perturbations.hpp"
#include "pot/synthetic.hpp"

namespace pot {

struct BacktestConfig {
  int days = 120;
  double dt = 1.0 / 252.0;
  double vol_of_vol = 0.6;  // annualized, of the VIX future
  SsrParams ssr;            // data-generating SSR and the value the POT hedge uses
  int n_portfolios = 50;
  int recalib_every = 5;
  int window = 20;
  double dr_epsilon = 1e-3;
  std::uint64_t seed = 7;
  SyntheticMarketConfig market;
  GridConfig grid;
  CalibConfig calib;

  void validate() const;
};

// Constant-maturity daily snapshots: the T1 SPX smile is fixed, the VIX future follows a lognormal walk
// (reflected to stay inside the quoted strikes), the VIX smile moves by the SSR rule on fixed strikes and the
// T2 SPX smile is the mixture implied by both.
struct MarketPath {
  std::vector<int> dates;
  std::vector<MarketSnapshot> snapshots;
  std::vector<std::vector<double>> vix_futures;  // per date, per VIX expiry
  std::uint64_t seed = 0;
};

MarketPath gen_market_path(const BacktestConfig& config, std::uint64_t seed);

struct SsrEstimate {
  double ssr = 0.0;
  double std_error = 0.0;
  int observations = 0;
};

// Slope of the fixed-strike vol change at the previous forward against -Skew * dF_V, using the `window`
// observations that end at observation `end` (default: the last one). One estimate per VIX expiry.
std::vector<SsrEstimate> ssr_regress(const MarketPath& path, int window, int end = -1, double bandwidth = 0.025);

enum class LegKind { call, put, future };

struct Leg {
  int expiry = 0;
  double strike = 0.0;
  LegKind kind = LegKind::call;
  double weight = 0.0;
};

struct Portfolio {
  std::vector<Leg> legs;
  int created = 0;
};

// Strikes with call deltas 0.10, 0.15, ..., 0.90 on the smile.
std::vector<double> delta_strikes(const VolSmile& smile);

// n portfolios on the first date: 17 legs each, puts below the 50-delta strike, weights Uniform(-1, 1).
std::vector<Portfolio> gen_portfolios(const MarketPath& path, int n, std::uint64_t seed);

// alpha_j = -G_j / g_j per expiry.
std::vector<double> hedge_sizes(std::span<const double> portfolio_greeks, std::span<const double> instrument_greeks);
// Two instruments matching two greeks: sum_j alpha_j g[r][j] = -G[r].
std::array<double, 2> hedge_sizes_2x2(const std::array<double, 2>& portfolio_greeks,
                                      const std::array<std::array<double, 2>, 2>& instrument_greeks);

enum class HedgeMethod { pot, benchmark };

struct HedgeReport {
  HedgeMethod method = HedgeMethod::pot;
  std::vector<int> pnl_dates;                 // date of each P&L entry
  std::vector<std::vector<double>> pnl;       // [portfolio][day]
  std::vector<double> stdev;                  // per portfolio
  std::vector<std::vector<double>> rolling;   // [portfolio][day - window + 1]
  std::vector<int> skipped_dates;
  int window = 20;
};

// POT sizes the VIX-future hedge from DR greeks under an SPX vol bump; the benchmark uses sticky-strike Black
// deltas of the VIX options (no SPX-to-VIX-smile coupling).
HedgeReport run_backtest(const MarketPath& path, const std::vector<Portfolio>& portfolios, HedgeMethod method,
                         const BacktestConfig& config);

struct ReportComparison {
  std::vector<double> stdev_diff;   // a - b
  std::vector<double> stdev_ratio;  // a / b
  std::vector<std::vector<double>> rolling_a;
  std::vector<std::vector<double>> rolling_b;
  double pct_a_wins = 0.0;          // share of portfolios with stdev_a < stdev_b
  double median_ratio = 0.0;
};

ReportComparison compare_reports(const HedgeReport& a, const HedgeReport& b);

double sample_stdev(std::span<const double> x);
std::vector<double> rolling_stdev(std::span<const double> x, int window);

const char* to_string(HedgeMethod m);
const char* to_string(LegKind k);

}  // namespace pot
