#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "pot/calibration.hpp"
#include "pot/grids_coupling.hpp"
#include "pot/synthetic.hpp"

namespace pot::fixtures {

// Default synthetic market calibrated on the desk grid, built once per test binary.
inline const MarketSnapshot& desk_snapshot() {
  static const MarketSnapshot s = synthetic_snapshot();
  return s;
}

inline const CalibratedModel& desk_model() {
  static const CalibratedModel m = calibrate(desk_snapshot(), GridConfig{}, CalibConfig{});
  return m;
}

// A small calibrated model for tests that need dense oracles. Coarser S2 grids leave the low-vol corner
// nodes without a feasible martingale and variance tilt.
inline const CalibratedModel& small_model() {
  static const CalibratedModel m = [] {
    GridConfig g;
    g.n1 = 6;
    g.nv = 5;
    g.n2 = 15;
    return calibrate(desk_snapshot(), g, CalibConfig{});
  }();
  return m;
}

inline GridSpec make_grid(std::vector<double> s1, std::vector<double> v, std::vector<double> s2, double tau = 30.0 / 365.0) {
  GridSpec g;
  g.s1 = std::move(s1);
  g.v = std::move(v);
  g.s2 = std::move(s2);
  g.tau = tau;
  return g;
}

inline std::vector<double> random_law(std::size_t n, std::mt19937_64& rng, double lo = 0.2, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> w(n);
  double s = 0.0;
  for (auto& x : w) s += (x = u(rng));
  for (auto& x : w) x /= s;
  return w;
}

inline Coupling random_coupling(const GridSpec& g, std::mt19937_64& rng) {
  return Coupling{g, random_law(g.size(), rng)};
}

// Hand-built 2x2x2 coupling used by several brute-force oracles.
inline Coupling hand_coupling() {
  const GridSpec g = make_grid({90.0, 110.0}, {15.0, 25.0}, {85.0, 115.0});
  return Coupling{g, {0.10, 0.15, 0.05, 0.20, 0.12, 0.08, 0.18, 0.12}};
}

inline double max_abs(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace pot::fixtures
