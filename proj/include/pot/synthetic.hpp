#pragma once

#include <vector>

#include "pot/market_model.hpp"

namespace pot {

// Self-consistent synthetic SPX/VIX market. T1 SPX smile: atm + skew*y + curvature*y^2 with y a tanh-saturated
// log-moneyness. VIX smile: atm + tanh-saturated skew in log-moneyness. Saturation keeps the flat extrapolation
// free of butterfly arbitrage. T2 SPX smile is priced from S2 = S1 exp(V sqrt(tau) Z - V^2 tau / 2) with V
// independent of S1, so the martingale and pointwise variance conditions are feasible by construction.
struct SyntheticMarketConfig {
  double spot = 100.0;
  double t1 = 30.0 / 365.0;
  double t2 = 60.0 / 365.0;
  double spx_atm_vol = 0.2;
  double spx_skew = -0.4;
  double spx_curvature = 0.6;
  double spx_min_vol = 0.05;
  double spx_saturation = 2.0;  // in ATM standard deviations
  double vix_future = 19.5;
  double vix_atm_vol = 0.9;
  double vix_skew = 0.012;  // d sigma / dK per index point at the money
  double vix_saturation = 0.35;  // in log-moneyness
  double vix_min_vol = 0.2;
  std::vector<double> vix_strikes = {10, 12.5, 15, 17.5, 20, 22.5, 25, 27.5, 30, 32.5, 35, 37.5, 40, 45};
  double v_scale = 0.01;
  double basis = 0.0;
  int quad_s1 = 240;
  int quad_v = 160;
};

VolSmile synthetic_spx_t1(const SyntheticMarketConfig& c);
VolSmile synthetic_vix_smile(const SyntheticMarketConfig& c);

// T2 SPX smile implied by the mixture given the T1 smile and the VIX smile.
VolSmile mixture_t2_smile(const VolSmile& spx_t1, const VolSmile& vix, double t2, double v_scale, int quad_s1,
                          int quad_v);

MarketSnapshot synthetic_snapshot(const SyntheticMarketConfig& c = {});

// Flat 20% T1 smile with the default VIX leg.
MarketSnapshot synthetic_flat_snapshot();

}  // namespace pot
