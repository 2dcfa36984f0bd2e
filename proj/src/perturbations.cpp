#include "pot/perturbations.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pot/errors.hpp"

namespace pot {
namespace {

constexpr double kVolFloor = 1e-4;

std::vector<double> diff_quotient(const std::vector<double>& a, const std::vector<double>& b, double step) {
  std::vector<double> h(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) h[i] = (a[i] - b[i]) / step;
  return h;
}

// Removes the roundoff-level block sum along the base law.
void zero_sum(std::vector<double>& h, const std::vector<double>& base) {
  const double s = std::accumulate(h.begin(), h.end(), 0.0);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] -= s * base[i];
}

void add_vol(VolSmile& smile, double dv) {
  for (double& v : smile.vols) {
    v += dv;
    if (!(v > 0.0)) throw BumpError("vol bump makes a vol nonpositive");
  }
}

// SPX part of the market move.
MarketSnapshot bump_spx(const MarketSnapshot& s, BumpKind kind, double eps) {
  MarketSnapshot out = s;
  switch (kind) {
    case BumpKind::spot:
      out.spot += eps;
      out.spx_t1.forward += eps;
      out.spx_t2.forward += eps;
      if (!(out.spot > 0.0)) throw BumpError("spot bump makes the spot nonpositive");
      break;
    case BumpKind::vol_t1: add_vol(out.spx_t1, eps); break;
    case BumpKind::vol_t2: add_vol(out.spx_t2, eps); break;
    case BumpKind::vol_parallel:
      add_vol(out.spx_t1, eps);
      add_vol(out.spx_t2, eps);
      break;
  }
  return out;
}

}  // namespace

BumpKind bump_kind_from_string(const std::string& s) {
  if (s == "spot") return BumpKind::spot;
  if (s == "vol_t1") return BumpKind::vol_t1;
  if (s == "vol_t2") return BumpKind::vol_t2;
  if (s == "vol_parallel") return BumpKind::vol_parallel;
  throw InputError("unknown bump kind '" + s + "'");
}

std::string to_string(BumpKind kind) {
  switch (kind) {
    case BumpKind::spot: return "spot";
    case BumpKind::vol_t1: return "vol_t1";
    case BumpKind::vol_t2: return "vol_t2";
    case BumpKind::vol_parallel: return "vol_parallel";
  }
  return "unknown";
}

bool bumps_t1(BumpKind kind) { return kind != BumpKind::vol_t2; }

void SsrParams::validate() const {
  if (!(ssr > 0.0) || !std::isfinite(ssr)) throw InputError("ssr must be positive");
  if (!(bandwidth > 0.0) || !(bandwidth < 1.0)) throw InputError("ssr bandwidth must lie in (0, 1)");
  if (lower_cutoff && upper_cutoff && !(*lower_cutoff < *upper_cutoff))
    throw InputError("ssr cutoffs must satisfy lower < upper");
}

PerturbationVector PerturbationVector::zeros(const GridSpec& grid) {
  PerturbationVector h;
  h.h1.assign(grid.n1(), 0.0);
  h.hv.assign(grid.nv(), 0.0);
  h.h2.assign(grid.n2(), 0.0);
  return h;
}

bool PerturbationVector::is_zero() const {
  auto z = [](const std::vector<double>& v) { return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }); };
  return z(h1) && z(hv) && z(h2);
}

std::vector<double> spot_bump_marginal(const MarginalLaw& mu1, double delta) {
  mu1.validate(1e-10);
  const std::size_t n = mu1.size();
  std::vector<double> h(n, 0.0);
  if (delta == 0.0) return h;
  const auto& x = mu1.grid;
  std::vector<double> moved = mu1.weights;
  for (std::size_t i = 0; i < n; ++i) {
    // An atom moves a fraction |delta| / spacing of its mass to the neighbour in the bump direction.
    std::size_t to;
    double spacing;
    if (delta > 0.0) {
      if (i + 1 == n) continue;
      to = i + 1;
      spacing = x[i + 1] - x[i];
    } else {
      if (i == 0) continue;
      to = i - 1;
      spacing = x[i] - x[i - 1];
    }
    const double frac = std::abs(delta) / spacing;
    if (frac > 1.0) throw BumpError("spot bump exceeds the grid spacing");
    const double m = frac * mu1.weights[i];
    moved[i] -= m;
    moved[to] += m;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (moved[i] < 0.0) throw BumpError("spot bump violates positivity");
    h[i] = (moved[i] - mu1.weights[i]) / delta;
  }
  return h;
}

std::vector<double> vol_bump_marginal(const VolSmile& smile, double dsigma, std::span<const double> grid) {
  if (dsigma == 0.0) return std::vector<double>(grid.size(), 0.0);
  VolSmile bumped = smile;
  add_vol(bumped, dsigma);
  MarginalLaw up;
  try {
    up = bl_density(bumped, grid);
  } catch (const ArbitrageError& e) {
    throw BumpError(std::string("bumped smile: ") + e.what());
  }
  const MarginalLaw base = bl_density(smile, grid);
  return diff_quotient(up.weights, base.weights, dsigma);
}

double atm_skew(const VolSmile& smile, double fv, double bandwidth) {
  const double up = smile_eval(smile, fv * (1.0 + bandwidth));
  const double dn = smile_eval(smile, fv * (1.0 - bandwidth));
  return (up - dn) / (2.0 * fv * bandwidth);
}

VolSmile ssr_shift_smile(const VolSmile& vix, double fv, double dfv, const SsrParams& params) {
  vix.validate();
  params.validate();
  if (!(fv >= vix.strikes.front() && fv <= vix.strikes.back()))
    throw InputError("VIX future lies outside the quoted strike range");
  VolSmile out = vix;
  out.forward = fv + dfv;
  if (dfv == 0.0) return out;
  if (!(out.forward > 0.0)) throw BumpError("VIX future move makes the future nonpositive");
  const double shift = -params.ssr * atm_skew(vix, fv, params.bandwidth) * dfv;
  std::size_t floored = 0;
  for (std::size_t i = 0; i < out.strikes.size(); ++i) {
    const double k = out.strikes[i];
    if (params.lower_cutoff && k < *params.lower_cutoff) continue;
    if (params.upper_cutoff && k > *params.upper_cutoff) continue;
    double v = out.vols[i] + shift;
    if (v < kVolFloor) {
      v = kVolFloor;
      ++floored;
    }
    out.vols[i] = v;
  }
  if (floored * 5 > out.strikes.size()) throw BumpError("SSR shift floors more than 20% of the VIX smile");
  return out;
}

double vix_future_sensitivity(const MarketSnapshot& snapshot, BumpKind kind, double v_scale) {
  snapshot.validate();
  const double step = kind == BumpKind::spot ? 1e-4 * snapshot.spot : 1e-4;
  const double up = forward_variance(bump_spx(snapshot, kind, step));
  const double dn = forward_variance(bump_spx(snapshot, kind, -step));
  const double num = (up - dn) / (2.0 * step);
  const double den = vix_strip_delta(snapshot.vix) * v_scale * v_scale;
  if (!(std::abs(den) > 0.0) || !std::isfinite(den)) throw BumpError("degenerate VIX strip delta");
  return num / den;
}

std::vector<double> perturbed_vix_marginal(const VolSmile& base, const VolSmile& shifted, double eps,
                                           std::span<const double> vgrid) {
  if (eps == 0.0) return std::vector<double>(vgrid.size(), 0.0);
  return diff_quotient(bl_density(shifted, vgrid).weights, bl_density(base, vgrid).weights, eps);
}

MarketSnapshot bump_market(const MarketSnapshot& snapshot, const BumpSpec& spec, double eps, double v_scale) {
  if (eps == 0.0) return snapshot;
  MarketSnapshot out = bump_spx(snapshot, spec.kind, eps);
  const double dfv = eps * vix_future_sensitivity(snapshot, spec.kind, v_scale);
  out.vix = ssr_shift_smile(snapshot.vix, snapshot.vix_future, dfv, spec.ssr);
  out.vix_future = snapshot.vix_future + dfv;
  out.validate();
  return out;
}

std::array<double, 2> constraint_rows(const GridSpec& grid, const PerturbationVector& h) {
  double a = 0.0, b = 0.0;
  for (std::size_t k = 0; k < grid.n2(); ++k) {
    a += h.h2[k] * grid.s2[k];
    b += h.h2[k] * std::log(grid.s2[k]);
  }
  for (std::size_t i = 0; i < grid.n1(); ++i) {
    a -= h.h1[i] * grid.s1[i];
    b -= h.h1[i] * std::log(grid.s1[i]);
  }
  for (std::size_t j = 0; j < grid.nv(); ++j) b += 0.5 * grid.tau * h.hv[j] * grid.var_level(j);
  return {a, b};
}

PerturbationVector tangent_project(const PerturbationVector& h, const GridSpec& grid, const MarginalLaw& mu2) {
  if (h.h1.size() != grid.n1() || h.hv.size() != grid.nv() || h.h2.size() != grid.n2() || mu2.size() != grid.n2())
    throw InputError("perturbation vector does not match the grid");
  const std::size_t n2 = grid.n2();
  double es = 0.0, el = 0.0, mass = 0.0;
  for (std::size_t k = 0; k < n2; ++k) {
    es += mu2.weights[k] * grid.s2[k];
    el += mu2.weights[k] * std::log(grid.s2[k]);
    mass += mu2.weights[k];
  }
  // Dividing by the computed mass keeps the directions zero-sum when the weights miss 1 by rounding.
  es /= mass;
  el /= mass;
  // Centered coordinates: the blocks sum to zero, so the rows are unchanged and the cancellation is milder.
  std::vector<double> xs(n2), xl(n2), u(n2), w(n2);
  for (std::size_t k = 0; k < n2; ++k) {
    xs[k] = grid.s2[k] - es;
    xl[k] = std::log(grid.s2[k]) - el;
    u[k] = mu2.weights[k] * xs[k];
    w[k] = mu2.weights[k] * xl[k];
  }
  // Strip the rounding residue of the centering so the corrections stay zero-sum after large multipliers.
  double su = 0.0, sw = 0.0;
  for (std::size_t k = 0; k < n2; ++k) {
    su += u[k];
    sw += w[k];
  }
  for (std::size_t k = 0; k < n2; ++k) {
    u[k] -= mu2.weights[k] * su / mass;
    w[k] -= mu2.weights[k] * sw / mass;
  }
  double r0 = 0.0, r1 = 0.0;
  for (std::size_t k = 0; k < n2; ++k) {
    r0 += h.h2[k] * xs[k];
    r1 += h.h2[k] * xl[k];
  }
  const double c1 = grid.s1[grid.n1() / 2], l1 = std::log(c1);
  for (std::size_t i = 0; i < grid.n1(); ++i) {
    r0 -= h.h1[i] * (grid.s1[i] - c1);
    r1 -= h.h1[i] * (std::log(grid.s1[i]) - l1);
  }
  for (std::size_t j = 0; j < grid.nv(); ++j) r1 += 0.5 * grid.tau * h.hv[j] * grid.var_level(j);
  // Rows applied to the directions form [[Var s2, Cov], [Cov, Var ln s2]] under mu2. The two directions are
  // nearly collinear on a narrow S2 grid, so the log direction is first orthogonalized against the level one.
  // A vanishing pivot is dropped, which is the pseudoinverse of the 2x2 system.
  double vss = 0.0, vsl = 0.0, vll = 0.0;
  for (std::size_t k = 0; k < n2; ++k) {
    vss += u[k] * xs[k];
    vsl += w[k] * xs[k];
    vll += w[k] * xl[k];
  }
  const double tol = 1e-13;
  const bool has_s = vss > tol * std::max(1.0, vll);
  const double beta = has_s ? vsl / vss : 0.0;
  const double vll_perp = vll - beta * vsl;
  const bool has_l = vll_perp > tol * std::max(vll, 1e-300);
  // With collinear directions the minimum-norm least-squares multiplier is applied along the level direction.
  const double k0 = !has_s ? 0.0 : has_l ? -r0 / vss : -(vss * r0 + vsl * r1) / (vss * vss + vsl * vsl);
  const double k1 = has_l ? -(r1 - beta * r0) / vll_perp : 0.0;
  PerturbationVector out = h;
  for (std::size_t k = 0; k < n2; ++k) out.h2[k] += k0 * u[k] + k1 * (w[k] - beta * u[k]);
  return out;
}

PerturbationVector tangent_project(const PerturbationVector& h, const CalibratedModel& model) {
  return tangent_project(h, model.grid, model.targets.s2);
}

PerturbationVector assemble_scenario(const GridSpec& grid, const Targets& base_targets, const MarketSnapshot& snapshot,
                                     const BumpSpec& spec, double fd_step) {
  spec.ssr.validate();
  if (!std::isfinite(spec.size)) throw InputError("bump size must be finite");
  PerturbationVector h = PerturbationVector::zeros(grid);
  h.scenario_id = spec.id;
  h.kind = spec.kind;
  h.epsilon = spec.size;
  if (spec.size == 0.0) return h;

  const double step = spec.kind == BumpKind::spot ? fd_step * snapshot.spot : fd_step;
  auto targets_at = [&](double e) {
    return reconcile_targets(grid, extract_targets(bump_market(snapshot, spec, e, grid.v_scale), grid));
  };
  Targets up, dn;
  try {
    up = targets_at(step);
    dn = targets_at(-step);
  } catch (const ArbitrageError& e) {
    throw BumpError(std::string("bumped market: ") + e.what());
  }
  h.h1 = diff_quotient(up.s1.weights, dn.s1.weights, 2.0 * step);
  h.hv = diff_quotient(up.v.weights, dn.v.weights, 2.0 * step);
  h.h2 = diff_quotient(up.s2.weights, dn.s2.weights, 2.0 * step);
  zero_sum(h.h1, base_targets.s1.weights);
  zero_sum(h.hv, base_targets.v.weights);
  zero_sum(h.h2, base_targets.s2.weights);
  h = tangent_project(h, grid, base_targets.s2);

  h.dfv = vix_future_sensitivity(snapshot, spec.kind, grid.v_scale);
  const VolSmile& vix = snapshot.vix;
  const double skew = atm_skew(vix, snapshot.vix_future, spec.ssr.bandwidth);
  for (std::size_t i = 0; i < vix.strikes.size(); ++i) {
    const double k = vix.strikes[i];
    const OptionType type = k >= snapshot.vix_future ? OptionType::call : OptionType::put;
    const double delta = black_delta(snapshot.vix_future, k, vix.vols[i], vix.expiry, type);
    const double vega = black_vega(snapshot.vix_future, k, vix.vols[i], vix.expiry);
    h.constraint_strikes.push_back(k);
    h.constraint_bumps.push_back((delta - vega * spec.ssr.ssr * skew) * h.dfv);
  }
  return h;
}

PerturbationVector assemble_scenario(const CalibratedModel& model, const MarketSnapshot& snapshot,
                                     const BumpSpec& spec, double fd_step) {
  return assemble_scenario(model.grid, model.targets, snapshot, spec, fd_step);
}

}  // namespace pot
