#include "pot/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "pot/errors.hpp"

namespace pot {
namespace {

std::vector<double> log_grid(double center, double half_width, int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    g[static_cast<std::size_t>(i)] = center * std::exp(-half_width + 2.0 * half_width * i / (n - 1));
  return g;
}

}  // namespace

VolSmile synthetic_spx_t1(const SyntheticMarketConfig& c) {
  VolSmile s;
  s.expiry = c.t1;
  s.forward = c.spot;
  const double sd = c.spx_atm_vol * std::sqrt(c.t1);
  for (double z = -5.0; z <= 4.0 + 1e-12; z += 0.5) {
    const double x = z * sd;
    const double w = c.spx_saturation * sd;
    const double y = w * std::tanh(x / w);
    s.strikes.push_back(c.spot * std::exp(x));
    s.vols.push_back(std::max(c.spx_atm_vol + c.spx_skew * y + c.spx_curvature * y * y, c.spx_min_vol));
  }
  return s;
}

VolSmile synthetic_vix_smile(const SyntheticMarketConfig& c) {
  VolSmile s;
  s.expiry = c.t1;
  s.forward = c.vix_future;
  s.strikes = c.vix_strikes;
  const double w = c.vix_saturation;
  const double amp = c.vix_skew * c.vix_future * w;
  for (double k : s.strikes)
    s.vols.push_back(std::max(c.vix_atm_vol + amp * std::tanh(std::log(k / c.vix_future) / w), c.vix_min_vol));
  return s;
}

VolSmile mixture_t2_smile(const VolSmile& spx_t1, const VolSmile& vix, double t2, double v_scale, int quad_s1,
                          int quad_v) {
  spx_t1.validate();
  vix.validate();
  if (!(t2 > spx_t1.expiry)) throw InputError("t2 must exceed t1");
  const double t1 = spx_t1.expiry;
  const double tau = t2 - t1;
  const double f = spx_t1.forward;
  const double s1max = *std::max_element(spx_t1.vols.begin(), spx_t1.vols.end());
  const double vmax = *std::max_element(vix.vols.begin(), vix.vols.end());
  const auto g1 = log_grid(f, 9.0 * s1max * std::sqrt(t1), quad_s1);
  const auto gv = log_grid(vix.forward, 8.0 * vmax * std::sqrt(vix.expiry), quad_v);
  const MarginalLaw law1 = bl_density(spx_t1, g1);
  const MarginalLaw lawv = bl_density(vix, gv);

  const double atm = SmileCurve(spx_t1)(f);
  VolSmile out;
  out.expiry = t2;
  out.forward = f;
  for (double z = -5.5; z <= 4.5 + 1e-12; z += 0.25) {
    const double k = f * std::exp(z * atm * std::sqrt(t2));
    const OptionType type = k >= f ? OptionType::call : OptionType::put;
    double price = 0.0;
    for (std::size_t j = 0; j < gv.size(); ++j) {
      const double vol = gv[j] * v_scale;
      double inner = 0.0;
      for (std::size_t i = 0; i < g1.size(); ++i) inner += law1.weights[i] * black_price(g1[i], k, vol, tau, type);
      price += lawv.weights[j] * inner;
    }
    out.strikes.push_back(k);
    out.vols.push_back(implied_vol(price, f, k, t2, type));
  }
  return out;
}

MarketSnapshot synthetic_snapshot(const SyntheticMarketConfig& c) {
  MarketSnapshot s;
  s.spot = c.spot;
  s.t1 = c.t1;
  s.t2 = c.t2;
  s.spx_t1 = synthetic_spx_t1(c);
  s.vix = synthetic_vix_smile(c);
  s.spx_t2 = mixture_t2_smile(s.spx_t1, s.vix, c.t2, c.v_scale, c.quad_s1, c.quad_v);
  s.vix_future = c.vix_future;
  s.basis = c.basis;
  s.validate();
  return s;
}

MarketSnapshot synthetic_flat_snapshot() {
  SyntheticMarketConfig c;
  c.spx_skew = 0.0;
  c.spx_curvature = 0.0;
  return synthetic_snapshot(c);
}

}  // namespace pot
