#include "pot/calibration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>

#include "pot/errors.hpp"

namespace pot {
namespace {

constexpr double kMaxLogScale = 700.0;

double axis_l1(std::span<const double> a, std::span<const double> b) { return l1_distance(a, b); }

struct NodeMoments {
  double r1 = 0.0;
  double r2 = 0.0;
  double j11 = 0.0;
  double j12 = 0.0;
  double j22 = 0.0;
  double norm() const { return std::hypot(r1, r2); }
};

NodeMoments node_moments(std::span<const double> kappa, std::span<const double> fm, std::span<const double> lg,
                         double level) {
  NodeMoments mo;
  double e11 = 0.0, e12 = 0.0, e22 = 0.0;
  for (std::size_t k = 0; k < kappa.size(); ++k) {
    const double a = fm[k];
    const double b = lg[k] - level;
    const double w = kappa[k];
    mo.r1 += w * a;
    mo.r2 += w * b;
    e11 += w * a * a;
    e12 += w * a * b;
    e22 += w * b * b;
  }
  mo.j11 = std::max(e11 - mo.r1 * mo.r1, 0.0);
  mo.j12 = e12 - mo.r1 * mo.r2;
  mo.j22 = std::max(e22 - mo.r2 * mo.r2, 0.0);
  return mo;
}

// Newton on one node without restoring global normalization. Row entries are rescaled in place.
NodeResult node_update_unnormalized(CalibrationState& state, const ConstraintFeatures& features, std::size_t node,
                                    const CalibConfig& config) {
  const GridSpec& g = state.coupling.grid;
  const std::size_t n2 = g.n2();
  const std::size_t i = node / g.nv();
  const std::size_t j = node % g.nv();
  double* row = state.coupling.mass.data() + node * n2;
  const auto fm = features.fm_row(i);
  const auto lg = features.log_row(i);
  const double level = features.level(j);

  double gamma = 0.0;
  for (std::size_t k = 0; k < n2; ++k) gamma += row[k];
  if (!(gamma > 0.0)) throw NodeError("zero conditional mass", node);

  std::vector<double> kappa(n2), trial(n2), expo(n2);
  for (std::size_t k = 0; k < n2; ++k) kappa[k] = row[k] / gamma;
  NodeMoments mo = node_moments(kappa, fm, lg, level);
  NodeResult res;
  res.residual_before = mo.norm();
  res.residual_after = mo.norm();
  double log_gamma = std::log(gamma);

  for (int it = 0; it < config.max_inner && mo.norm() > config.eps_fin; ++it) {
    double lambda = config.lambda;
    bool accepted = false;
    for (int esc = 0; esc <= 12 && !accepted; ++esc, lambda *= 10.0) {
      const double a11 = mo.j11 + lambda;
      const double a22 = mo.j22 + lambda;
      const double det = a11 * a22 - mo.j12 * mo.j12;
      if (!(det > 0.0) || !std::isfinite(det)) continue;
      const double d1 = -(a22 * mo.r1 - mo.j12 * mo.r2) / det;
      const double d2 = -(a11 * mo.r2 - mo.j12 * mo.r1) / det;
      double scale = 1.0;
      for (int h = 0; h <= 8; ++h, scale *= 0.5) {
        const double s1 = scale * d1;
        const double s2 = scale * d2;
        double tmax = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n2; ++k) {
          expo[k] = s1 * fm[k] + s2 * (lg[k] - level);
          tmax = std::max(tmax, expo[k]);
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < n2; ++k) {
          trial[k] = kappa[k] * std::exp(expo[k] - tmax);
          sum += trial[k];
        }
        if (!(sum > 0.0) || !std::isfinite(sum)) continue;
        for (double& t : trial) t /= sum;
        const NodeMoments next = node_moments(trial, fm, lg, level);
        if (next.norm() < mo.norm()) {
          state.delta_m[node] += s1;
          state.delta_c[node] += s2;
          log_gamma += tmax + std::log(sum);
          kappa.swap(trial);
          mo = next;
          accepted = true;
          ++res.steps;
          break;
        }
      }
    }
    if (!accepted) {
      if (mo.norm() <= 1e3 * config.eps_fin) break;  // stalled at roundoff level; the outer loop re-checks
      throw NodeError("singular damped Jacobian after damping escalation", node);
    }
  }
  if (log_gamma > kMaxLogScale) throw NodeError("node mass overflow", node);
  const double new_gamma = std::exp(log_gamma);
  for (std::size_t k = 0; k < n2; ++k) row[k] = new_gamma * kappa[k];
  res.residual_after = mo.norm();
  return res;
}

void normalize(std::vector<double>& mass) {
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  for (double& m : mass) m /= total;
}

}  // namespace

void CalibConfig::validate() const {
  if (!(eps_marg > 0.0) || !(eps_fin > 0.0)) throw InputError("calibration tolerances must be positive");
  if (!(lambda >= 0.0)) throw InputError("newton damping must be nonnegative");
  if (max_outer < 1 || max_inner < 1) throw InputError("iteration caps must be positive");
}

CalibrationState CalibrationState::zeros(const GridSpec& grid) {
  CalibrationState s;
  s.log_a.assign(grid.n1(), 0.0);
  s.log_b.assign(grid.nv(), 0.0);
  s.log_c.assign(grid.n2(), 0.0);
  s.delta_m.assign(grid.nodes(), 0.0);
  s.delta_c.assign(grid.nodes(), 0.0);
  s.coupling.grid = grid;
  return s;
}

double CalibDiagnostics::max_marginal_error() const { return std::max({marg_err_s1, marg_err_v, marg_err_s2}); }

std::string CalibDiagnostics::summary() const {
  std::ostringstream os;
  os << "outer=" << outer_iterations << " newton_steps=" << newton_steps << " marg_err=(" << marg_err_s1 << ","
     << marg_err_v << "," << marg_err_s2 << ") max|rM|=" << max_abs_rm << " max|rC|=" << max_abs_rc;
  return os.str();
}

ConstraintFeatures::ConstraintFeatures(const GridSpec& grid)
    : n2_(grid.n2()), fm_(grid.n1() * grid.n2()), lg_(grid.n1() * grid.n2()), level_(grid.nv()) {
  for (std::size_t i = 0; i < grid.n1(); ++i)
    for (std::size_t k = 0; k < n2_; ++k) {
      fm_[i * n2_ + k] = grid.s2[k] - grid.s1[i];
      lg_[i * n2_ + k] = grid.log_payoff(grid.s2[k] / grid.s1[i]);
    }
  for (std::size_t j = 0; j < grid.nv(); ++j) level_[j] = grid.var_level(j);
}

Coupling gibbs_coupling(const GridSpec& grid, std::span<const double> log_prior, const CalibrationState& state,
                        Exec exec) {
  if (log_prior.size() != grid.size()) throw InputError("log prior does not match grid");
  const ConstraintFeatures feat(grid);
  const std::size_t n2 = grid.n2();
  const std::size_t nodes = grid.nodes();
  Coupling mu{grid, std::vector<double>(grid.size())};
  double* out = mu.mass.data();
  std::vector<double> node_max(nodes);
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (std::size_t n = 0; n < nodes; ++n) {
    const std::size_t i = n / grid.nv();
    const std::size_t j = n % grid.nv();
    const double base = state.log_a[i] + state.log_b[j];
    const double dm = state.delta_m[n];
    const double dc = state.delta_c[n];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n2; ++k) {
      const double e = log_prior[n * n2 + k] + base + state.log_c[k] + dm * feat.fm(i, k) + dc * feat.fc(i, j, k);
      out[n * n2 + k] = e;
      mx = std::max(mx, e);
    }
    node_max[n] = mx;
  }
  const double gmax = *std::max_element(node_max.begin(), node_max.end());
  if (!std::isfinite(gmax)) throw NumericalError("non-finite Gibbs exponent");
  std::vector<double> part(nodes);
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (std::size_t n = 0; n < nodes; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n2; ++k) {
      const double m = std::exp(out[n * n2 + k] - gmax);
      out[n * n2 + k] = m;
      s += m;
    }
    part[n] = s;
  }
  const double total = std::accumulate(part.begin(), part.end(), 0.0);
  for (double& m : mu.mass) m /= total;
  return mu;
}

double dual_objective(const GridSpec& grid, std::span<const double> log_prior, const CalibrationState& state,
                      const Targets& targets) {
  const ConstraintFeatures feat(grid);
  const std::size_t n2 = grid.n2();
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> e(grid.size());
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    const std::size_t i = n / grid.nv();
    const std::size_t j = n % grid.nv();
    for (std::size_t k = 0; k < n2; ++k) {
      e[n * n2 + k] = log_prior[n * n2 + k] + state.log_a[i] + state.log_b[j] + state.log_c[k] +
                      state.delta_m[n] * feat.fm(i, k) + state.delta_c[n] * feat.fc(i, j, k);
      mx = std::max(mx, e[n * n2 + k]);
    }
  }
  double s = 0.0;
  for (double x : e) s += std::exp(x - mx);
  const double log_z = mx + std::log(s);
  double lin = 0.0;
  for (std::size_t i = 0; i < grid.n1(); ++i) lin += targets.s1.weights[i] * state.log_a[i];
  for (std::size_t j = 0; j < grid.nv(); ++j) lin += targets.v.weights[j] * state.log_b[j];
  for (std::size_t k = 0; k < n2; ++k) lin += targets.s2.weights[k] * state.log_c[k];
  return lin - log_z;
}

void sinkhorn_sweep(CalibrationState& state, const Targets& targets, Exec exec) {
  Coupling& mu = state.coupling;
  const GridSpec& g = mu.grid;
  const std::size_t n2 = g.n2();
  const std::size_t nv = g.nv();
  const bool par = exec == Exec::parallel;
  double* m = mu.mass.data();

  auto update = [&](int axis) {
    const Marginals cur = marginals(mu, exec);
    const MarginalLaw& have = axis == 0 ? cur.s1 : (axis == 1 ? cur.v : cur.s2);
    const MarginalLaw& want = axis == 0 ? targets.s1 : (axis == 1 ? targets.v : targets.s2);
    std::vector<double>& logs = axis == 0 ? state.log_a : (axis == 1 ? state.log_b : state.log_c);
    std::vector<double> factor(have.size());
    for (std::size_t x = 0; x < have.size(); ++x) {
      if (!(have.weights[x] > 0.0)) throw NumericalError("zero marginal mass in Sinkhorn update");
      factor[x] = want.weights[x] / have.weights[x];
      logs[x] += std::log(factor[x]);
    }
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t n = 0; n < g.nodes(); ++n) {
      const std::size_t i = n / nv;
      const std::size_t j = n % nv;
      for (std::size_t k = 0; k < n2; ++k) {
        const double f = axis == 0 ? factor[i] : (axis == 1 ? factor[j] : factor[k]);
        m[n * n2 + k] *= f;
      }
    }
  };
  update(0);
  update(1);
  update(2);
}

NodeResult newton_node_update(CalibrationState& state, const ConstraintFeatures& features, std::size_t node,
                              const CalibConfig& config) {
  if (node >= state.coupling.grid.nodes()) throw InputError("node index out of range");
  const NodeResult r = node_update_unnormalized(state, features, node, config);
  normalize(state.coupling.mass);
  state.newton_steps += r.steps;
  return r;
}

double newton_pass(CalibrationState& state, const ConstraintFeatures& features, const CalibConfig& config) {
  const std::size_t nodes = state.coupling.grid.nodes();
  std::vector<NodeResult> res(nodes);
  std::vector<std::exception_ptr> failed(nodes);
#pragma omp parallel for schedule(dynamic, 8) if (config.exec == Exec::parallel)
  for (std::size_t n = 0; n < nodes; ++n) {
    try {
      res[n] = node_update_unnormalized(state, features, n, config);
    } catch (const NodeError&) {
      failed[n] = std::current_exception();
    }
  }
  for (const auto& e : failed)
    if (e) std::rethrow_exception(e);
  normalize(state.coupling.mass);
  double worst = 0.0;
  for (const auto& r : res) {
    state.newton_steps += r.steps;
    worst = std::max(worst, r.residual_after);
  }
  return worst;
}

Targets extract_targets(const MarketSnapshot& snapshot, const GridSpec& grid) {
  snapshot.validate();
  Targets t{bl_density(snapshot.spx_t1, grid.s1), bl_density(snapshot.vix, grid.v), bl_density(snapshot.spx_t2, grid.s2)};
  for (MarginalLaw* law : {&t.s1, &t.v, &t.s2}) {
    const double floor = 1e-14 * *std::max_element(law->weights.begin(), law->weights.end());
    double total = 0.0;
    for (double& w : law->weights) {
      w = std::max(w, floor);
      total += w;
    }
    for (double& w : law->weights) w /= total;
  }
  return t;
}

Targets reconcile_targets(const GridSpec& grid, const Targets& raw) {
  const double m1 = raw.s1.mean();
  double l1 = 0.0;
  for (std::size_t i = 0; i < grid.n1(); ++i) l1 += raw.s1.weights[i] * std::log(grid.s1[i]);
  double w = 0.0;
  for (std::size_t j = 0; j < grid.nv(); ++j) w += raw.v.weights[j] * grid.var_level(j);
  const double ty = -0.5 * grid.tau * w;  // target for E[ln s2 - l1]

  const std::size_t n2 = grid.n2();
  std::vector<double> x(n2), y(n2);
  for (std::size_t k = 0; k < n2; ++k) {
    x[k] = grid.s2[k] / m1 - 1.0;
    y[k] = std::log(grid.s2[k]) - l1;
  }
  const std::vector<double>& base = raw.s2.weights;
  std::vector<double> q(n2);
  auto tilt = [&](double a, double b, std::vector<double>& out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n2; ++k) mx = std::max(mx, a * x[k] + b * y[k]);
    double s = 0.0;
    for (std::size_t k = 0; k < n2; ++k) {
      out[k] = base[k] * std::exp(a * x[k] + b * y[k] - mx);
      s += out[k];
    }
    for (double& o : out) o /= s;
  };
  struct Mom {
    double ex, ey, cxx, cxy, cyy;
  };
  auto moments = [&](const std::vector<double>& p) {
    Mom mo{0, 0, 0, 0, 0};
    for (std::size_t k = 0; k < n2; ++k) {
      mo.ex += p[k] * x[k];
      mo.ey += p[k] * y[k];
    }
    for (std::size_t k = 0; k < n2; ++k) {
      const double dx = x[k] - mo.ex;
      const double dy = y[k] - mo.ey;
      mo.cxx += p[k] * dx * dx;
      mo.cxy += p[k] * dx * dy;
      mo.cyy += p[k] * dy * dy;
    }
    return mo;
  };

  double a = 0.0, b = 0.0;
  tilt(a, b, q);
  Mom mo = moments(q);
  auto err = [&](const Mom& m) { return std::hypot(m.ex, m.ey - ty); };
  for (int it = 0; it < 100 && err(mo) > 1e-16; ++it) {
    const double det = mo.cxx * mo.cyy - mo.cxy * mo.cxy;
    if (!(det > 0.0)) throw ArbitrageError("target reconciliation is singular");
    const double fx = mo.ex;
    const double fy = mo.ey - ty;
    const double da = -(mo.cyy * fx - mo.cxy * fy) / det;
    const double db = -(mo.cxx * fy - mo.cxy * fx) / det;
    double step = 1.0;
    bool ok = false;
    std::vector<double> trial(n2);
    for (int h = 0; h < 30; ++h, step *= 0.5) {
      tilt(a + step * da, b + step * db, trial);
      const Mom nm = moments(trial);
      if (err(nm) < err(mo)) {
        a += step * da;
        b += step * db;
        q.swap(trial);
        mo = nm;
        ok = true;
        break;
      }
    }
    if (!ok) break;
  }
  if (err(mo) > 1e-12) throw ArbitrageError("targets violate the aggregate martingale/variance identities");
  Targets out = raw;
  out.s2.weights = q;
  return out;
}

namespace {

void fill_diagnostics(const CalibrationState& state, const Targets& targets, bool constraints, CalibDiagnostics& d,
                      Exec exec) {
  const Marginals m = marginals(state.coupling, exec);
  d.marg_err_s1 = axis_l1(m.s1.weights, targets.s1.weights);
  d.marg_err_v = axis_l1(m.v.weights, targets.v.weights);
  d.marg_err_s2 = axis_l1(m.s2.weights, targets.s2.weights);
  d.max_abs_rm = 0.0;
  d.max_abs_rc = 0.0;
  if (constraints) {
    for (double r : martingale_residual(state.coupling)) d.max_abs_rm = std::max(d.max_abs_rm, std::abs(r));
    for (double r : consistency_residual(state.coupling)) d.max_abs_rc = std::max(d.max_abs_rc, std::abs(r));
  }
}

}  // namespace

CalibratedModel calibrate_targets(const GridSpec& grid, const Targets& prior_marginals, const Targets& targets,
                                  const CalibConfig& config, const CalibrationState* warm) {
  config.validate();
  grid.validate();
  targets.s1.validate(1e-10);
  targets.v.validate(1e-10);
  targets.s2.validate(1e-10);
  const auto start = std::chrono::steady_clock::now();

  CalibratedModel model;
  model.grid = grid;
  model.prior_marginals = prior_marginals;
  model.targets = targets;
  model.config = config;
  {
    const Coupling prior = build_prior(grid, prior_marginals.s1, prior_marginals.v);
    model.log_prior.resize(prior.mass.size());
    for (std::size_t x = 0; x < prior.mass.size(); ++x) model.log_prior[x] = std::log(prior.mass[x]);
  }
  CalibrationState& st = model.state;
  st = warm ? *warm : CalibrationState::zeros(grid);
  st.coupling.grid = grid;
  st.outer_iterations = 0;
  st.newton_steps = 0;
  st.coupling = gibbs_coupling(grid, model.log_prior, st, config.exec);

  const ConstraintFeatures features(grid);
  CalibDiagnostics& d = model.diagnostics;
  bool converged = false;
  auto within = [&] {
    return d.max_marginal_error() <= config.eps_marg && d.max_abs_rm <= config.eps_fin && d.max_abs_rc <= config.eps_fin;
  };
  // A warm state that already meets every tolerance is returned as is.
  if (warm) {
    fill_diagnostics(st, targets, config.enforce_constraints, d, config.exec);
    d.trace.push_back({0, d.marg_err_s1, d.marg_err_v, d.marg_err_s2, d.max_abs_rm, d.max_abs_rc});
    converged = within();
  }
  for (int it = 1; it <= config.max_outer && !converged; ++it) {
    sinkhorn_sweep(st, targets, config.exec);
    if (config.enforce_constraints) newton_pass(st, features, config);
    st.coupling = gibbs_coupling(grid, model.log_prior, st, config.exec);
    st.outer_iterations = it;
    fill_diagnostics(st, targets, config.enforce_constraints, d, config.exec);
    d.trace.push_back({it, d.marg_err_s1, d.marg_err_v, d.marg_err_s2, d.max_abs_rm, d.max_abs_rc});
    converged = within();
  }
  d.outer_iterations = st.outer_iterations;
  d.newton_steps = st.newton_steps;
  d.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!converged) throw CalibrationError("calibration did not converge", d.summary());
  return model;
}

CalibratedModel calibrate(const MarketSnapshot& snapshot, const GridConfig& grid_config, const CalibConfig& config) {
  const GridSpec grid = build_grids(snapshot, grid_config);
  const Targets targets = reconcile_targets(grid, extract_targets(snapshot, grid));
  CalibratedModel model = calibrate_targets(grid, targets, targets, config);
  model.snapshot = snapshot;
  return model;
}

CalibratedModel recalibrate_targets(const CalibratedModel& model, const Targets& targets) {
  CalibratedModel out = calibrate_targets(model.grid, model.prior_marginals, targets, model.config, &model.state);
  out.snapshot = model.snapshot;
  return out;
}

CalibratedModel recalibrate(const CalibratedModel& model, const MarketSnapshot& bumped) {
  const Targets targets = reconcile_targets(model.grid, extract_targets(bumped, model.grid));
  CalibratedModel out = recalibrate_targets(model, targets);
  out.snapshot = bumped;
  return out;
}

void refresh_coupling(CalibratedModel& model) {
  model.state.coupling = gibbs_coupling(model.grid, model.log_prior, model.state, model.config.exec);
}

std::vector<SmileFitRow> smile_fit(const Coupling& mu, const MarketSnapshot& snapshot) {
  const Marginals m = marginals(mu);
  std::vector<SmileFitRow> out;
  auto add = [&](const char* name, const VolSmile& smile, const MarginalLaw& law, bool calls_only) {
    for (std::size_t i = 0; i < smile.strikes.size(); ++i) {
      const double k = smile.strikes[i];
      const bool call = calls_only || k >= smile.forward;
      const OptionType type = call ? OptionType::call : OptionType::put;
      double model = 0.0;
      for (std::size_t x = 0; x < law.size(); ++x)
        model += law.weights[x] * std::max(call ? law.grid[x] - k : k - law.grid[x], 0.0);
      SmileFitRow r;
      r.instrument = name;
      r.strike = k;
      r.type = call ? "call" : "put";
      r.market = black_price(smile.forward, k, smile.vols[i], smile.expiry, type);
      r.model = model;
      r.error = std::abs(model - r.market) / smile.forward;
      out.push_back(std::move(r));
    }
  };
  add("spx_t1", snapshot.spx_t1, m.s1, false);
  add("spx_t2", snapshot.spx_t2, m.s2, false);
  add("vix", snapshot.vix, m.v, true);
  return out;
}

}  // namespace pot
