#include "pot/market_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "pot/errors.hpp"

namespace pot {
namespace {

void require_finite(double x, const char* name) {
  if (!std::isfinite(x)) throw InputError(std::string("non-finite ") + name);
}

void check_black_inputs(double forward, double strike, double vol, double tau) {
  require_finite(forward, "forward");
  require_finite(strike, "strike");
  require_finite(vol, "vol");
  require_finite(tau, "tau");
  if (forward <= 0.0 || strike <= 0.0 || tau <= 0.0) throw InputError("forward, strike and tau must be positive");
  if (vol < 0.0) throw InputError("vol must be nonnegative");
}

// Uniform grid in log-strike covering the strip integrals.
std::vector<double> strip_log_grid(const VolSmile& smile, std::size_t n = 4001) {
  const double vmax = *std::max_element(smile.vols.begin(), smile.vols.end());
  const double half = 10.0 * std::max(vmax, 1e-4) * std::sqrt(smile.expiry);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = -half + 2.0 * half * static_cast<double>(i) / static_cast<double>(n - 1);
  return x;
}

double otm_price(double f, double k, double vol, double t) {
  return black_price(f, k, vol, t, k >= f ? OptionType::call : OptionType::put);
}

}  // namespace

void VolSmile::validate() const {
  if (strikes.size() != vols.size()) throw InputError("smile strikes and vols differ in length");
  if (strikes.size() < 3) throw InputError("smile needs at least 3 strikes");
  if (!(expiry > 0.0) || !(forward > 0.0)) throw InputError("smile expiry and forward must be positive");
  for (std::size_t i = 0; i < strikes.size(); ++i) {
    if (!std::isfinite(strikes[i]) || !std::isfinite(vols[i])) throw InputError("non-finite smile entry");
    if (vols[i] <= 0.0) throw InputError("smile vols must be positive");
    if (strikes[i] <= 0.0) throw InputError("smile strikes must be positive");
    if (i > 0 && strikes[i] <= strikes[i - 1]) throw InputError("smile strikes must be strictly increasing");
  }
}

double MarginalLaw::mean() const {
  return std::inner_product(grid.begin(), grid.end(), weights.begin(), 0.0);
}

void MarginalLaw::validate(double tol) const {
  if (grid.size() != weights.size() || grid.empty()) throw InputError("law grid and weights differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw InputError("law weights must be nonnegative");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw InputError("law grid must be strictly increasing");
    total += weights[i];
  }
  if (std::abs(total - 1.0) > tol) throw InputError("law weights do not sum to 1");
}

void MarketSnapshot::validate() const {
  if (!(spot > 0.0)) throw InputError("spot must be positive");
  if (!(t1 > 0.0) || !(t2 > t1)) throw InputError("expiries must satisfy 0 < t1 < t2");
  if (!(vix_future > 0.0)) throw InputError("vix_future must be positive");
  if (!std::isfinite(basis)) throw InputError("basis must be finite");
  spx_t1.validate();
  spx_t2.validate();
  vix.validate();
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double black_price(double forward, double strike, double vol, double tau, OptionType type) {
  check_black_inputs(forward, strike, vol, tau);
  const double sd = vol * std::sqrt(tau);
  double call = 0.0;
  double put = 0.0;
  if (sd == 0.0) {
    call = std::max(forward - strike, 0.0);
    put = std::max(strike - forward, 0.0);
  } else {
    const double d1 = std::log(forward / strike) / sd + 0.5 * sd;
    const double d2 = d1 - sd;
    if (strike >= forward) {
      call = std::max(forward * norm_cdf(d1) - strike * norm_cdf(d2), 0.0);
      put = call + (strike - forward);
    } else {
      put = std::max(strike * norm_cdf(-d2) - forward * norm_cdf(-d1), 0.0);
      call = put + (forward - strike);
    }
  }
  return type == OptionType::call ? call : put;
}

double black_delta(double forward, double strike, double vol, double tau, OptionType type) {
  check_black_inputs(forward, strike, vol, tau);
  const double sd = vol * std::sqrt(tau);
  double nd1 = 0.0;
  if (sd == 0.0) {
    nd1 = forward > strike ? 1.0 : (forward < strike ? 0.0 : 0.5);
  } else {
    nd1 = norm_cdf(std::log(forward / strike) / sd + 0.5 * sd);
  }
  return type == OptionType::call ? nd1 : nd1 - 1.0;
}

double black_vega(double forward, double strike, double vol, double tau) {
  check_black_inputs(forward, strike, vol, tau);
  const double sd = vol * std::sqrt(tau);
  if (sd == 0.0) return 0.0;
  const double d1 = std::log(forward / strike) / sd + 0.5 * sd;
  return forward * norm_pdf(d1) * std::sqrt(tau);
}

double black_gamma(double forward, double strike, double vol, double tau) {
  check_black_inputs(forward, strike, vol, tau);
  const double sd = vol * std::sqrt(tau);
  if (sd == 0.0) return 0.0;
  const double d1 = std::log(forward / strike) / sd + 0.5 * sd;
  return norm_pdf(d1) / (forward * sd);
}

double implied_vol(double price, double forward, double strike, double tau, OptionType type) {
  check_black_inputs(forward, strike, 0.0, tau);
  require_finite(price, "price");
  const double intrinsic =
      type == OptionType::call ? std::max(forward - strike, 0.0) : std::max(strike - forward, 0.0);
  const double upper = type == OptionType::call ? forward : strike;
  const double slack = 1e-14 * std::max(forward, strike);
  if (price < intrinsic - slack || price >= upper) throw InversionError("price outside no-arbitrage bounds");
  const double target = price - intrinsic;
  if (target <= 0.0) return 0.0;
  const OptionType otm = strike >= forward ? OptionType::call : OptionType::put;

  double lo = 0.0;
  double hi = 1.0;
  while (black_price(forward, strike, hi, tau, otm) < target) {
    hi *= 2.0;
    if (hi > 1e4) throw InversionError("implied vol bracket failed");
  }
  double vol = std::clamp(std::sqrt(2.0 * std::numbers::pi / tau) * target / forward, 0.5 * hi * 1e-6, hi);
  for (int it = 0; it < 200; ++it) {
    const double f = black_price(forward, strike, vol, tau, otm) - target;
    if (f == 0.0) break;
    if (f > 0.0) hi = vol; else lo = vol;
    const double vega = black_vega(forward, strike, vol, tau);
    double next = vega > 0.0 ? vol - f / vega : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - vol) <= 1e-16 * std::max(1.0, vol)) {
      vol = next;
      break;
    }
    vol = next;
    if (hi - lo <= 1e-16 * hi) break;
  }
  return vol;
}

SmileCurve::SmileCurve(const VolSmile& smile) : smile_(smile) {
  const auto& x = smile_.strikes;
  const auto& y = smile_.vols;
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw InputError("smile curve needs at least two nodes");
  std::vector<double> d(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    if (!(x[k + 1] > x[k])) throw InputError("smile strikes must be strictly increasing");
    d[k] = (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
  }
  slopes_.assign(n, 0.0);
  slopes_[0] = d[0];
  slopes_[n - 1] = d[n - 2];
  for (std::size_t k = 1; k + 1 < n; ++k) slopes_[k] = d[k - 1] * d[k] > 0.0 ? 0.5 * (d[k - 1] + d[k]) : 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    if (d[k] == 0.0) {
      slopes_[k] = 0.0;
      slopes_[k + 1] = 0.0;
      continue;
    }
    const double a = slopes_[k] / d[k];
    const double b = slopes_[k + 1] / d[k];
    const double r = a * a + b * b;
    if (r > 9.0) {
      const double t = 3.0 / std::sqrt(r);
      slopes_[k] = t * a * d[k];
      slopes_[k + 1] = t * b * d[k];
    }
  }
}

double SmileCurve::operator()(double strike) const {
  const auto& x = smile_.strikes;
  const auto& y = smile_.vols;
  if (strike <= x.front()) return y.front();
  if (strike >= x.back()) return y.back();
  const auto it = std::upper_bound(x.begin(), x.end(), strike);
  const std::size_t k = static_cast<std::size_t>(it - x.begin()) - 1;
  const double h = x[k + 1] - x[k];
  const double t = (strike - x[k]) / h;
  const double t2 = t * t;
  const double t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * y[k] + (t3 - 2 * t2 + t) * h * slopes_[k] + (-2 * t3 + 3 * t2) * y[k + 1] +
         (t3 - t2) * h * slopes_[k + 1];
}

double smile_eval(const VolSmile& smile, double strike) {
  if (!(strike > 0.0)) throw InputError("strike must be positive");
  return SmileCurve(smile)(strike);
}

MarginalLaw bl_density(const VolSmile& smile, std::span<const double> grid) {
  const std::size_t n = grid.size();
  if (n < 2) throw InputError("density grid needs at least two points");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(grid[i] > 0.0)) throw InputError("density grid must be positive");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw InputError("density grid must be strictly increasing");
  }
  const SmileCurve curve(smile);
  std::vector<double> call(n);
  for (std::size_t i = 0; i < n; ++i)
    call[i] = black_price(smile.forward, grid[i], curve(grid[i]), smile.expiry, OptionType::call);
  std::vector<double> slope(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) slope[i] = (call[i + 1] - call[i]) / (grid[i + 1] - grid[i]);

  MarginalLaw law;
  law.grid.assign(grid.begin(), grid.end());
  law.weights.resize(n);
  law.weights[0] = 1.0 + slope[0];
  for (std::size_t i = 1; i + 1 < n; ++i) law.weights[i] = slope[i] - slope[i - 1];
  law.weights[n - 1] = -slope[n - 2];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double& w = law.weights[i];
    if (w < -1e-10) throw ArbitrageError("butterfly arbitrage at grid point " + std::to_string(i));
    w = std::max(w, 0.0);
    total += w;
  }
  if (!(total > 0.0)) throw ArbitrageError("density has no mass on the grid");
  for (double& w : law.weights) w /= total;
  return law;
}

double log_contract_var(const VolSmile& smile, StripKind kind) {
  smile.validate();
  const SmileCurve curve(smile);
  const double f = smile.forward;
  const double t = smile.expiry;
  const auto x = strip_log_grid(smile);
  const double dx = x[1] - x[0];
  double integral = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double k = f * std::exp(x[i]);
    const double p = otm_price(f, k, curve(k), t);
    // dK = K dx
    const double integrand = kind == StripKind::spx ? p / k : p * k;
    const double w = (i == 0 || i + 1 == x.size()) ? 0.5 : 1.0;
    integral += w * integrand * dx;
  }
  if (kind == StripKind::spx) return 2.0 * integral / t;
  return f * f + 2.0 * integral;
}

double vix_strip_delta(const VolSmile& smile) {
  smile.validate();
  const SmileCurve curve(smile);
  const double f = smile.forward;
  const double t = smile.expiry;
  const auto x = strip_log_grid(smile);
  const double dx = x[1] - x[0];
  double integral = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double k = f * std::exp(x[i]);
    const double d = black_delta(f, k, curve(k), t, k >= f ? OptionType::call : OptionType::put);
    const double w = (i == 0 || i + 1 == x.size()) ? 0.5 : 1.0;
    integral += w * d * k * dx;
  }
  return 2.0 * f + 2.0 * integral;
}

double forward_variance(const MarketSnapshot& snapshot) {
  snapshot.validate();
  const double v1 = log_contract_var(snapshot.spx_t1, StripKind::spx);
  const double v2 = log_contract_var(snapshot.spx_t2, StripKind::spx);
  const double fv = (v2 * snapshot.t2 - v1 * snapshot.t1) / snapshot.tau() - snapshot.basis;
  if (fv < 0.0) throw ArbitrageError("negative forward variance");
  return fv;
}

}  // namespace pot
