#pragma once

#include <span>
#include <vector>

namespace pot {

enum class OptionType { call, put };

// Implied volatility curve for one expiry. Strikes ascending, vols annualized decimals.
struct VolSmile {
  double expiry = 0.0;
  double forward = 0.0;
  std::vector<double> strikes;
  std::vector<double> vols;

  void validate() const;
};

// Discrete probability law on an ascending grid.
struct MarginalLaw {
  std::vector<double> grid;
  std::vector<double> weights;

  std::size_t size() const { return grid.size(); }
  double mean() const;
  void validate(double tol = 1e-12) const;
};

struct MarketSnapshot {
  double spot = 0.0;
  double t1 = 0.0;
  double t2 = 0.0;
  VolSmile spx_t1;
  VolSmile spx_t2;
  VolSmile vix;
  double vix_future = 0.0;
  double basis = 0.0;

  double tau() const { return t2 - t1; }
  void validate() const;
};

double norm_cdf(double x);
double norm_pdf(double x);

// Undiscounted Black-76.
double black_price(double forward, double strike, double vol, double tau, OptionType type);
double black_delta(double forward, double strike, double vol, double tau, OptionType type);
double black_vega(double forward, double strike, double vol, double tau);
double black_gamma(double forward, double strike, double vol, double tau);

double implied_vol(double price, double forward, double strike, double tau, OptionType type);

// Monotone (Fritsch-Carlson) cubic in strike with flat extrapolation.
class SmileCurve {
 public:
  explicit SmileCurve(const VolSmile& smile);
  double operator()(double strike) const;
  const VolSmile& smile() const { return smile_; }

 private:
  VolSmile smile_;
  std::vector<double> slopes_;
};

double smile_eval(const VolSmile& smile, double strike);

// Call prices on the grid, second strike differences, clipped and renormalized.
MarginalLaw bl_density(const VolSmile& smile, std::span<const double> grid);

enum class StripKind { spx, vix };

// spx: annualized variance-swap strike. vix: second moment F^2 + 2*int(OTM) in the smile's units.
double log_contract_var(const VolSmile& smile, StripKind kind);

// d/dF of the vix strip second moment with strike vols held fixed.
double vix_strip_delta(const VolSmile& smile);

// Annualized forward variance over [t1, t2] net of the snapshot basis.
double forward_variance(const MarketSnapshot& snapshot);

}  // namespace pot
