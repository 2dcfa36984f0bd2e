#include "pot/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <tuple>

#include <spdlog/spdlog.h>

#include "pot/dr_engine.hpp"
#include "pot/errors.hpp"
#include "pot/payoffs.hpp"

namespace pot {

void BacktestConfig::validate() const {
  if (days < 2) throw InputError("backtest needs at least 2 days");
  if (!(dt > 0.0)) throw InputError("backtest dt must be positive");
  if (!(vol_of_vol >= 0.0)) throw InputError("vol of vol must be nonnegative");
  if (n_portfolios < 0) throw InputError("n_portfolios must be nonnegative");
  if (recalib_every < 1) throw InputError("recalib_every must be at least 1");
  if (window < 2) throw InputError("rolling window must be at least 2");
  if (window > days - 1) throw InputError("rolling window exceeds the P&L length");
  if (!(dr_epsilon > 0.0)) throw InputError("dr_epsilon must be positive");
  ssr.validate();
  calib.validate();
}

const char* to_string(HedgeMethod m) { return m == HedgeMethod::pot ? "pot" : "benchmark"; }

const char* to_string(LegKind k) {
  switch (k) {
    case LegKind::call: return "call";
    case LegKind::put: return "put";
    case LegKind::future: return "future";
  }
  return "?";
}

namespace {

// Reflects x into [lo, hi].
double reflect(double x, double lo, double hi) {
  const double w = hi - lo;
  double y = std::fmod(x - lo, 2.0 * w);
  if (y < 0.0) y += 2.0 * w;
  return y <= w ? lo + y : hi - (y - w);
}

double median(std::vector<double> x) {
  if (x.empty()) return 0.0;
  const std::size_t m = x.size() / 2;
  std::nth_element(x.begin(), x.begin() + static_cast<long>(m), x.end());
  const double hi = x[m];
  if (x.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(x.begin(), x.begin() + static_cast<long>(m)));
}

}  // namespace

MarketPath gen_market_path(const BacktestConfig& config, std::uint64_t seed) {
  config.validate();
  MarketPath path;
  path.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const MarketSnapshot day0 = synthetic_snapshot(config.market);
  const auto& ks = day0.vix.strikes;
  const double lo = std::log(ks.front() * (1.0 + 4.0 * config.ssr.bandwidth));
  const double hi = std::log(ks.back() / (1.0 + 4.0 * config.ssr.bandwidth));
  if (!(lo < hi)) throw InputError("VIX strike range too narrow for the path generator");

  const double eta = config.vol_of_vol;
  const double sd = eta * std::sqrt(config.dt);
  MarketSnapshot snap = day0;
  for (int t = 0; t < config.days; ++t) {
    if (t > 0) {
      const double prev = snap.vix_future;
      const double step = sd * normal(rng) - 0.5 * sd * sd;
      // A zero step keeps the level bit-exact instead of round-tripping through log and exp.
      const double next = step == 0.0 ? prev : std::exp(reflect(std::log(prev) + step, lo, hi));
      snap.vix = ssr_shift_smile(snap.vix, prev, next - prev, config.ssr);
      snap.vix.forward = next;
      snap.vix_future = next;
      if (next != prev)
        snap.spx_t2 = mixture_t2_smile(snap.spx_t1, snap.vix, snap.t2, config.market.v_scale, config.market.quad_s1,
                                       config.market.quad_v);
      snap.validate();
    }
    path.dates.push_back(t);
    path.snapshots.push_back(snap);
    path.vix_futures.push_back({snap.vix_future});
  }
  return path;
}

std::vector<SsrEstimate> ssr_regress(const MarketPath& path, int window, int end, double bandwidth) {
  const int n_obs = static_cast<int>(path.snapshots.size()) - 1;
  if (end < 0) end = n_obs;
  if (end > n_obs) throw InputError("regression window ends after the path");
  if (window < 10) throw EstimationError("SSR regression needs at least 10 observations");
  if (window > end) throw EstimationError("regression window longer than the available history");

  // Observation t uses dates t-1 and t.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::vector<std::pair<double, double>> obs;
  for (int t = end - window + 1; t <= end; ++t) {
    const MarketSnapshot& a = path.snapshots[static_cast<std::size_t>(t - 1)];
    const MarketSnapshot& b = path.snapshots[static_cast<std::size_t>(t)];
    const double f0 = a.vix_future;
    const double x = -atm_skew(a.vix, f0, bandwidth) * (b.vix_future - f0);
    const double y = smile_eval(b.vix, f0) - smile_eval(a.vix, f0);
    obs.emplace_back(x, y);
    sx += x;
    sy += y;
  }
  const double n = static_cast<double>(window);
  const double mx = sx / n, my = sy / n;
  for (auto [x, y] : obs) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (!(sxx > 1e-300)) throw EstimationError("SSR regressor has zero variance");
  SsrEstimate e;
  e.ssr = sxy / sxx;
  e.observations = window;
  double rss = 0.0;
  for (auto [x, y] : obs) {
    const double r = (y - my) - e.ssr * (x - mx);
    rss += r * r;
  }
  e.std_error = std::sqrt(rss / (n - 2.0) / sxx);
  return {e};
}

std::vector<double> delta_strikes(const VolSmile& smile) {
  smile.validate();
  const SmileCurve curve(smile);
  const double f = smile.forward;
  const double t = smile.expiry;
  double vmax = 0.0;
  for (double v : smile.vols) vmax = std::max(vmax, v);
  const double span = 8.0 * vmax * std::sqrt(t);
  auto delta = [&](double lk) {
    const double k = f * std::exp(lk);
    return black_delta(f, k, curve(k), t, OptionType::call);
  };
  std::vector<double> out;
  for (int i = 0; i < 17; ++i) {
    const double target = 0.10 + 0.05 * i;
    double a = -span, b = span;
    if (!(delta(a) > target && delta(b) < target))
      throw NumericalError("portfolio generation: delta " + std::to_string(target) + " not bracketed");
    for (int it = 0; it < 200 && b - a > 1e-13; ++it) {
      const double m = 0.5 * (a + b);
      (delta(m) > target ? a : b) = m;
    }
    out.push_back(f * std::exp(0.5 * (a + b)));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Portfolio> gen_portfolios(const MarketPath& path, int n, std::uint64_t seed) {
  if (n < 0) throw InputError("portfolio count must be nonnegative");
  std::vector<Portfolio> out;
  if (n == 0) return out;
  if (path.snapshots.empty()) throw InputError("empty market path");
  const VolSmile& smile = path.snapshots.front().vix;
  const std::vector<double> strikes = delta_strikes(smile);
  const double k50 = strikes[8];  // 0.50 delta
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int p = 0; p < n; ++p) {
    Portfolio port;
    port.created = path.dates.front();
    for (double k : strikes) port.legs.push_back({0, k, k < k50 ? LegKind::put : LegKind::call, unif(rng)});
    out.push_back(std::move(port));
  }
  return out;
}

std::vector<double> hedge_sizes(std::span<const double> portfolio_greeks, std::span<const double> instrument_greeks) {
  if (portfolio_greeks.size() != instrument_greeks.size()) throw InputError("hedge greek size mismatch");
  std::vector<double> out(portfolio_greeks.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (!(std::abs(instrument_greeks[j]) >= 1e-12))
      throw NumericalError("unhedgeable expiry: hedge instrument greek below 1e-12");
    out[j] = -portfolio_greeks[j] / instrument_greeks[j];
  }
  return out;
}

std::array<double, 2> hedge_sizes_2x2(const std::array<double, 2>& G, const std::array<std::array<double, 2>, 2>& g) {
  const double det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
  const double scale = std::max({std::abs(g[0][0] * g[1][1]), std::abs(g[0][1] * g[1][0]), 1e-300});
  if (!(std::abs(det) > 1e-12 * scale)) throw NumericalError("hedge instruments have collinear greeks");
  return {(-G[0] * g[1][1] + G[1] * g[0][1]) / det, (-G[1] * g[0][0] + G[0] * g[1][0]) / det};
}

double sample_stdev(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  // Shifted by the first value, so a constant series gives exactly zero.
  const double x0 = x.front();
  double m = 0.0;
  for (double v : x) m += v - x0;
  m /= static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - x0 - m) * (v - x0 - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

std::vector<double> rolling_stdev(std::span<const double> x, int window) {
  if (window < 2) throw InputError("rolling window must be at least 2");
  std::vector<double> out;
  const auto w = static_cast<std::size_t>(window);
  for (std::size_t e = w; e <= x.size(); ++e) out.push_back(sample_stdev(x.subspan(e - w, w)));
  return out;
}

namespace {

using LegKey = std::tuple<int, double, LegKind>;

double leg_price(const MarketSnapshot& s, const LegKey& leg) {
  const auto [expiry, k, kind] = leg;
  (void)expiry;
  if (kind == LegKind::future) return s.vix_future;
  return black_price(s.vix_future, k, smile_eval(s.vix, k), s.vix.expiry,
                     kind == LegKind::call ? OptionType::call : OptionType::put);
}

double leg_sticky_delta(const MarketSnapshot& s, const LegKey& leg) {
  const auto [expiry, k, kind] = leg;
  (void)expiry;
  if (kind == LegKind::future) return 1.0;
  return black_delta(s.vix_future, k, smile_eval(s.vix, k), s.vix.expiry,
                     kind == LegKind::call ? OptionType::call : OptionType::put);
}

PayoffSpec leg_payoff(const LegKey& leg) {
  const auto [expiry, k, kind] = leg;
  (void)expiry;
  PayoffSpec p;
  p.kind = kind == LegKind::future ? PayoffKind::vix_future
           : kind == LegKind::call ? PayoffKind::vix_call
                                   : PayoffKind::vix_put;
  p.strike = k;
  return p;
}

// POT hedge greeks: DR sensitivities of every distinct leg and of the future under an SPX vol bump, with the
// coupling kept on the day's targets by full recalibration every few days and a DR update in between.
class PotGreeks {
 public:
  PotGreeks(const MarketPath& path, const BacktestConfig& config) : path_(path), config_(config) {
    grid_ = build_grids(path.snapshots.front(), config.grid);
  }

  // Returns greeks for `legs` followed by the future, or nullopt when the date has to be skipped.
  std::optional<std::vector<double>> at(std::size_t t, const std::vector<LegKey>& legs) {
    const MarketSnapshot& snap = path_.snapshots[t];
    Coupling coupling;
    Targets targets;
    try {
      if (!model_ || t % static_cast<std::size_t>(config_.recalib_every) == 0) {
        if (!model_) {
          const Targets tg = reconcile_targets(grid_, extract_targets(snap, grid_));
          model_ = calibrate_targets(grid_, tg, tg, config_.calib);
        } else {
          model_ = recalibrate_targets(*model_, reconcile_targets(grid_, extract_targets(snap, grid_)));
        }
        model_->snapshot = snap;
        engine_.emplace(model_->coupling(), config_.calib.exec);
        coupling = model_->coupling();
        targets = model_->targets;
      } else {
        targets = reconcile_targets(grid_, extract_targets(snap, grid_));
        coupling = engine_->perturbed(ReducedTargets{targets.s1, targets.v});
      }
      BumpSpec spec;
      spec.id = "hedge";
      spec.kind = BumpKind::vol_parallel;
      spec.ssr = config_.ssr;
      const PerturbationVector h = assemble_scenario(grid_, targets, snap, spec);
      std::vector<std::vector<double>> tables;
      for (const auto& leg : legs) tables.push_back(tabulate(leg_payoff(leg), grid_));
      tables.push_back(tabulate(leg_payoff({0, 0.0, LegKind::future}), grid_));
      return DrEngine(coupling, config_.calib.exec).greeks(tables, h, config_.dr_epsilon);
    } catch (const NumericalError& e) {
      if (!model_) throw;
      spdlog::warn("backtest: skipping date {} ({})", path_.dates[t], e.what());
      return std::nullopt;
    }
  }

 private:
  const MarketPath& path_;
  const BacktestConfig& config_;
  GridSpec grid_;
  std::optional<CalibratedModel> model_;
  std::optional<DrEngine> engine_;
};

}  // namespace

HedgeReport run_backtest(const MarketPath& path, const std::vector<Portfolio>& portfolios, HedgeMethod method,
                         const BacktestConfig& config) {
  config.validate();
  const std::size_t days = path.snapshots.size();
  if (days < 2) throw InputError("market path needs at least 2 dates");
  if (static_cast<std::size_t>(config.window) > days - 1) throw InputError("rolling window exceeds the P&L length");

  HedgeReport rep;
  rep.method = method;
  rep.window = config.window;
  for (std::size_t t = 1; t < days; ++t) rep.pnl_dates.push_back(path.dates[t]);
  if (portfolios.empty()) return rep;

  // Distinct legs across all portfolios.
  std::map<LegKey, std::size_t> index;
  std::vector<LegKey> legs;
  for (const auto& p : portfolios)
    for (const auto& l : p.legs) {
      if (l.expiry != 0) throw InputError("only one VIX expiry is quoted");
      const LegKey key{l.expiry, l.kind == LegKind::future ? 0.0 : l.strike, l.kind};
      if (index.emplace(key, legs.size()).second) legs.push_back(key);
    }

  // Per-leg greek per date, normalized by the future's greek so the hedge size is linear in the legs.
  std::vector<std::vector<double>> ratio(days - 1, std::vector<double>(legs.size(), 0.0));
  std::optional<PotGreeks> pot;
  if (method == HedgeMethod::pot) pot.emplace(path, config);
  for (std::size_t t = 0; t + 1 < days; ++t) {
    if (method == HedgeMethod::benchmark) {
      for (std::size_t l = 0; l < legs.size(); ++l) ratio[t][l] = leg_sticky_delta(path.snapshots[t], legs[l]);
      continue;
    }
    const auto g = pot->at(t, legs);
    if (!g) {
      ratio[t] = ratio[t - 1];
      rep.skipped_dates.push_back(path.dates[t]);
      continue;
    }
    const double gf = g->back();
    for (std::size_t l = 0; l < legs.size(); ++l) {
      const std::array<double, 1> num{(*g)[l]}, den{gf};
      ratio[t][l] = -hedge_sizes(num, den)[0];
    }
  }

  std::vector<std::vector<double>> price(days, std::vector<double>(legs.size()));
  for (std::size_t t = 0; t < days; ++t)
    for (std::size_t l = 0; l < legs.size(); ++l) price[t][l] = leg_price(path.snapshots[t], legs[l]);

  const std::size_t np = portfolios.size();
  rep.pnl.assign(np, std::vector<double>(days - 1));
  rep.stdev.assign(np, 0.0);
  rep.rolling.assign(np, {});
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < np; ++p) {
    const auto& port = portfolios[p];
    for (std::size_t t = 1; t < days; ++t) {
      double dp = 0.0, exposure = 0.0;
      for (const auto& l : port.legs) {
        const std::size_t li = index.at({l.expiry, l.kind == LegKind::future ? 0.0 : l.strike, l.kind});
        dp += l.weight * (price[t][li] - price[t - 1][li]);
        exposure += l.weight * ratio[t - 1][li];
      }
      const double alpha = -exposure;
      rep.pnl[p][t - 1] = dp + alpha * (path.snapshots[t].vix_future - path.snapshots[t - 1].vix_future);
    }
    rep.stdev[p] = sample_stdev(rep.pnl[p]);
    rep.rolling[p] = rolling_stdev(rep.pnl[p], config.window);
  }
  return rep;
}

ReportComparison compare_reports(const HedgeReport& a, const HedgeReport& b) {
  if (a.pnl.size() != b.pnl.size() || a.pnl_dates != b.pnl_dates)
    throw InputError("comparison error: reports cover different portfolios or dates");
  ReportComparison c;
  std::size_t wins = 0;
  for (std::size_t p = 0; p < a.pnl.size(); ++p) {
    c.stdev_diff.push_back(a.stdev[p] - b.stdev[p]);
    c.stdev_ratio.push_back(b.stdev[p] > 0.0 ? a.stdev[p] / b.stdev[p] : (a.stdev[p] > 0.0 ? INFINITY : 1.0));
    if (a.stdev[p] < b.stdev[p]) ++wins;
  }
  c.rolling_a = a.rolling;
  c.rolling_b = b.rolling;
  c.pct_a_wins = a.pnl.empty() ? 0.0 : 100.0 * static_cast<double>(wins) / static_cast<double>(a.pnl.size());
  c.median_ratio = median(c.stdev_ratio);
  return c;
}

}  // namespace pot
