#include "pot/fisher_response.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pot/errors.hpp"

namespace pot {
namespace {

std::size_t argmax(const std::vector<double>& w) {
  return static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
}

StatisticLayout make_layout(const Coupling& mu, bool constraint_stats) {
  const Marginals m = marginals(mu, Exec::serial);
  const GridSpec& g = mu.grid;
  StatisticLayout l;
  l.n1 = g.n1();
  l.nv = g.nv();
  l.n2 = g.n2();
  l.drop1 = argmax(m.s1.weights);
  l.dropv = argmax(m.v.weights);
  l.drop2 = argmax(m.s2.weights);
  l.constraint_stats = constraint_stats;
  if (constraint_stats) {
    std::vector<double> node(g.nodes(), 0.0);
    for (std::size_t n = 0; n < g.nodes(); ++n)
      for (std::size_t k = 0; k < g.n2(); ++k) node[n] += mu.mass[n * g.n2() + k];
    l.drop_node = argmax(node);
  }
  return l;
}

}  // namespace

FisherSystem FisherSystem::build(const Coupling& mu, const FisherOptions& options) {
  mu.validate(1e-10);
  if (!(options.lambda >= 0.0)) throw InputError("Fisher damping must be nonnegative");
  FisherSystem fs;
  fs.layout_ = make_layout(mu, options.constraint_stats);
  fs.grid_ = mu.grid;
  fs.mass_ = mu.mass;
  const StatisticLayout& l = fs.layout_;
  const GridSpec& g = mu.grid;
  const std::size_t p = l.indicators();
  const std::size_t q = 2 * l.node_pairs();
  const std::size_t n2 = g.n2();
  const std::size_t nv = g.nv();

  fs.a_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  fs.b_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
  fs.d_.assign(2 * q, 0.0);
  fs.mean_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p + q));

  // Indicator block: pairwise marginals.
  for (std::size_t i = 0; i < g.n1(); ++i)
    for (std::size_t j = 0; j < nv; ++j)
      for (std::size_t k = 0; k < n2; ++k) {
        const double w = mu(i, j, k);
        const long a = l.s1_pos(i), b = l.v_pos(j), c = l.s2_pos(k);
        if (a >= 0) {
          fs.a_(a, a) += w;
          fs.mean_(a) += w;
          if (b >= 0) fs.a_(a, b) += w;
          if (c >= 0) fs.a_(a, c) += w;
        }
        if (b >= 0) {
          fs.a_(b, b) += w;
          fs.mean_(b) += w;
          if (c >= 0) fs.a_(b, c) += w;
        }
        if (c >= 0) {
          fs.a_(c, c) += w;
          fs.mean_(c) += w;
        }
      }
  fs.a_ = fs.a_.selfadjointView<Eigen::Upper>();

  if (l.constraint_stats) {
    const ConstraintFeatures feat(g);
    const std::size_t nodes = g.nodes();
#pragma omp parallel for schedule(static) if (options.exec == Exec::parallel)
    for (std::size_t n = 0; n < nodes; ++n) {
      const long pos = l.node_pos(n);
      if (pos < 0) continue;
      const std::size_t col = static_cast<std::size_t>(pos) - p;
      const std::size_t i = n / nv;
      const std::size_t j = n % nv;
      double em = 0.0, ec = 0.0, mm = 0.0, mc = 0.0, cc = 0.0;
      for (std::size_t k = 0; k < n2; ++k) {
        const double w = mu.mass[n * n2 + k];
        const double fm = feat.fm(i, k);
        const double fc = feat.fc(i, j, k);
        em += w * fm;
        ec += w * fc;
        mm += w * fm * fm;
        mc += w * fm * fc;
        cc += w * fc * fc;
        const long r = l.s2_pos(k);
        if (r >= 0) {
          fs.b_(r, static_cast<Eigen::Index>(col)) = w * fm;
          fs.b_(r, static_cast<Eigen::Index>(col + 1)) = w * fc;
        }
      }
      for (long r : {l.s1_pos(i), l.v_pos(j)}) {
        if (r < 0) continue;
        fs.b_(r, static_cast<Eigen::Index>(col)) = em;
        fs.b_(r, static_cast<Eigen::Index>(col + 1)) = ec;
      }
      double* d = fs.d_.data() + 2 * col;
      d[0] = mm;
      d[1] = mc;
      d[2] = mc;
      d[3] = cc;
      fs.mean_(pos) = em;
      fs.mean_(pos + 1) = ec;
    }
  }
  if (fs.factorize(options.lambda)) return fs;
  if (options.lambda > 0.0 || !options.escalate)
    throw ConditioningError("reduced Fisher matrix is numerically singular; retry with lambda > 0");
  if (!fs.factorize(1e-12 * fs.trace() / static_cast<double>(fs.dim())))
    throw ConditioningError("reduced Fisher matrix is singular even after damping escalation");
  return fs;
}

bool FisherSystem::factorize(double lambda) {
  lambda_ = lambda;
  const Eigen::Index p = a_.rows();
  const std::size_t q = static_cast<std::size_t>(b_.cols());
  dinv_.assign(2 * q, 0.0);
  Eigen::MatrixXd bd = b_;
  for (std::size_t c = 0; c < q; c += 2) {
    const double* d = d_.data() + 2 * c;
    const double a00 = d[0] + lambda, a01 = d[1], a11 = d[3] + lambda;
    const double det = a00 * a11 - a01 * a01;
    if (!(det > 0.0) || !std::isfinite(det)) return false;
    double* inv = dinv_.data() + 2 * c;
    inv[0] = a11 / det;
    inv[1] = -a01 / det;
    inv[2] = -a01 / det;
    inv[3] = a00 / det;
    const Eigen::Index c0 = static_cast<Eigen::Index>(c);
    bd.col(c0) = b_.col(c0) * inv[0] + b_.col(c0 + 1) * inv[2];
    bd.col(c0 + 1) = b_.col(c0) * inv[1] + b_.col(c0 + 1) * inv[3];
  }
  Eigen::MatrixXd s = a_;
  s.diagonal().array() += lambda;
  if (q > 0) {
    // Schur update S -= B D^-1 B^T. The s1 and v rows of B are sparse (one node row or column of the grid each),
    // so only the s2 tail block needs a dense product.
    const Eigen::Index head = static_cast<Eigen::Index>(layout_.n1 + layout_.nv - 2);
    const Eigen::Index tail = p - head;
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(q); ++c)
      for (Eigen::Index r = 0; r < head; ++r)
        if (const double x = bd(r, c); x != 0.0) s.row(r).noalias() -= x * b_.col(c).transpose();
    s.bottomRightCorner(tail, tail).noalias() -= bd.bottomRows(tail) * b_.bottomRows(tail).transpose();
    s.bottomLeftCorner(tail, head) = s.topRightCorner(head, tail).transpose();
  }
  scale_.resize(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    if (!(s(i, i) > 0.0)) return false;
    scale_(i) = 1.0 / std::sqrt(s(i, i));
  }
  const Eigen::MatrixXd scaled = scale_.asDiagonal() * s * scale_.asDiagonal();
  schur_.compute(scaled);
  if (schur_.info() != Eigen::Success) return false;
  const Eigen::MatrixXd lmat = schur_.matrixL();
  if (lmat.diagonal().array().square().minCoeff() < 1e-14) return false;
  z_ = solve_second_moment(mean_);
  sm_denominator_ = 1.0 - mean_.dot(z_);
  return sm_denominator_ > 1e-13;
}

double FisherSystem::trace() const {
  double t = a_.trace() - mean_.squaredNorm();
  for (std::size_t c = 0; c < d_.size(); c += 4) t += d_[c] + d_[c + 3];
  return t;
}

Eigen::VectorXd FisherSystem::solve_second_moment(const Eigen::VectorXd& r) const {
  const Eigen::Index p = a_.rows();
  const Eigen::Index q = b_.cols();
  const Eigen::VectorXd ri = r.head(p);
  Eigen::VectorXd dn(q);
  const Eigen::VectorXd rn = r.tail(q);
  auto dmul = [&](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
    for (Eigen::Index c = 0; c < q; c += 2) {
      const double* inv = dinv_.data() + 2 * c;
      out(c) = inv[0] * x(c) + inv[1] * x(c + 1);
      out(c + 1) = inv[2] * x(c) + inv[3] * x(c + 1);
    }
  };
  Eigen::VectorXd t = ri;
  if (q > 0 && !rn.isZero(0.0)) {
    dmul(rn, dn);
    t.noalias() -= b_ * dn;
  }
  const Eigen::VectorXd yi = scale_.asDiagonal() * schur_.solve(scale_.asDiagonal() * t);
  Eigen::VectorXd y(p + q);
  y.head(p) = yi;
  if (q > 0) {
    Eigen::VectorXd w = rn;
    w.noalias() -= b_.transpose() * yi;
    Eigen::VectorXd yn(q);
    dmul(w, yn);
    y.tail(q) = yn;
  }
  return y;
}

Eigen::VectorXd FisherSystem::solve_once(const Eigen::VectorXd& r) const {
  const Eigen::VectorXd y = solve_second_moment(r);
  return y + z_ * (mean_.dot(y) / sm_denominator_);
}

Eigen::VectorXd FisherSystem::solve(const Eigen::VectorXd& r, int refine) const {
  if (r.size() != static_cast<Eigen::Index>(dim())) throw InputError("right-hand side has the wrong dimension");
  Eigen::VectorXd x = solve_once(r);
  for (int it = 0; it < refine; ++it) x += solve_once(r - apply(x));
  return x;
}

Eigen::VectorXd FisherSystem::apply(const Eigen::VectorXd& x) const {
  if (x.size() != static_cast<Eigen::Index>(dim())) throw InputError("vector has the wrong dimension");
  const Eigen::Index p = a_.rows();
  const Eigen::Index q = b_.cols();
  Eigen::VectorXd out(p + q);
  out.head(p) = a_ * x.head(p);
  if (q > 0) {
    out.head(p).noalias() += b_ * x.tail(q);
    Eigen::VectorXd t = b_.transpose() * x.head(p);
    for (Eigen::Index c = 0; c < q; c += 2) {
      const double* d = d_.data() + 2 * c;
      t(c) += d[0] * x(p + c) + d[1] * x(p + c + 1);
      t(c + 1) += d[2] * x(p + c) + d[3] * x(p + c + 1);
    }
    out.tail(q) = t;
  }
  out -= mean_ * mean_.dot(x);
  out += lambda_ * x;
  return out;
}

Eigen::MatrixXd FisherSystem::dense() const {
  const StatisticLayout& l = layout_;
  const GridSpec& g = grid_;
  const Eigen::Index dim = static_cast<Eigen::Index>(l.dim());
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  const ConstraintFeatures feat(g);
  long idx[5];
  double val[5];
  for (std::size_t i = 0; i < g.n1(); ++i)
    for (std::size_t j = 0; j < g.nv(); ++j)
      for (std::size_t k = 0; k < g.n2(); ++k) {
        const double w = mass_[g.index(i, j, k)];
        int cnt = 0;
        auto push = [&](long pos, double v) {
          if (pos >= 0) {
            idx[cnt] = pos;
            val[cnt] = v;
            ++cnt;
          }
        };
        push(l.s1_pos(i), 1.0);
        push(l.v_pos(j), 1.0);
        push(l.s2_pos(k), 1.0);
        const long np = l.node_pos(i * g.nv() + j);
        if (np >= 0) {
          push(np, feat.fm(i, k));
          push(np + 1, feat.fc(i, j, k));
        }
        for (int a = 0; a < cnt; ++a) {
          mean(idx[a]) += w * val[a];
          for (int b = 0; b < cnt; ++b) e(idx[a], idx[b]) += w * val[a] * val[b];
        }
      }
  return e - mean * mean.transpose();
}

void attach_fisher(CalibratedModel& model, double lambda) {
  FisherOptions opt;
  opt.constraint_stats = model.config.enforce_constraints;
  opt.lambda = lambda;
  opt.exec = model.config.exec;
  model.fisher = std::make_shared<const FisherSystem>(FisherSystem::build(model.coupling(), opt));
}

const FisherSystem& fisher_of(const CalibratedModel& model) {
  if (!model.fisher) throw InputError("model has no Fisher system attached");
  return *model.fisher;
}

FisherSystem fisher_matrix(const Coupling& mu) {
  FisherOptions opt;
  opt.constraint_stats = false;
  return FisherSystem::build(mu, opt);
}

Eigen::VectorXd covariance_vector(const Coupling& mu, const StatisticLayout& l, std::span<const double> payoff,
                                  Exec exec) {
  const GridSpec& g = mu.grid;
  if (payoff.size() != g.size()) throw InputError("payoff is not tabulated on the coupling grid");
  if (l.n1 != g.n1() || l.nv != g.nv() || l.n2 != g.n2()) throw InputError("statistic layout does not match grid");
  const double eg = expectation(mu, payoff, exec);
  const std::size_t n2 = g.n2();
  const std::size_t nv = g.nv();
  const std::size_t nodes = g.nodes();
  const bool par = exec == Exec::parallel;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l.dim()));
  std::vector<double> node_sum(nodes);
  const ConstraintFeatures feat(g);
  const double* m = mu.mass.data();
  const double* G = payoff.data();
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t n = 0; n < nodes; ++n) {
    const std::size_t i = n / nv;
    const std::size_t j = n % nv;
    double s = 0.0, sm = 0.0, sc = 0.0;
    for (std::size_t k = 0; k < n2; ++k) {
      const double w = m[n * n2 + k] * (G[n * n2 + k] - eg);
      s += w;
      sm += w * feat.fm(i, k);
      sc += w * feat.fc(i, j, k);
    }
    node_sum[n] = s;
    const long pos = l.node_pos(n);
    if (pos >= 0) {
      out(pos) = sm;
      out(pos + 1) = sc;
    }
  }
  for (std::size_t n = 0; n < nodes; ++n) {
    const long a = l.s1_pos(n / nv);
    const long b = l.v_pos(n % nv);
    if (a >= 0) out(a) += node_sum[n];
    if (b >= 0) out(b) += node_sum[n];
  }
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t k = 0; k < n2; ++k) {
    const long c = l.s2_pos(k);
    if (c < 0) continue;
    double s = 0.0;
    for (std::size_t n = 0; n < nodes; ++n) s += m[n * n2 + k] * (G[n * n2 + k] - eg);
    out(c) = s;
  }
  return out;
}

Eigen::VectorXd reduce_perturbation(const StatisticLayout& l, const PerturbationVector& h) {
  if (h.h1.size() != l.n1 || h.hv.size() != l.nv || h.h2.size() != l.n2)
    throw InputError("perturbation vector does not match the grid");
  for (const auto* block : {&h.h1, &h.hv, &h.h2}) {
    const double s = std::accumulate(block->begin(), block->end(), 0.0);
    if (!(std::abs(s) <= 1e-10)) throw InputError("inadmissible perturbation: a block does not sum to zero");
  }
  Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l.dim()));
  for (std::size_t i = 0; i < l.n1; ++i)
    if (const long a = l.s1_pos(i); a >= 0) r(a) = h.h1[i];
  for (std::size_t j = 0; j < l.nv; ++j)
    if (const long a = l.v_pos(j); a >= 0) r(a) = h.hv[j];
  for (std::size_t k = 0; k < l.n2; ++k)
    if (const long a = l.s2_pos(k); a >= 0) r(a) = h.h2[k];
  return r;
}

Eigen::VectorXd solve_response(const FisherSystem& fisher, const Eigen::VectorXd& h) { return fisher.solve(h); }

double lr_sensitivity(const CalibratedModel& model, std::span<const double> payoff, const PerturbationVector& h) {
  const FisherSystem& fs = fisher_of(model);
  const Eigen::VectorXd theta = fs.solve(reduce_perturbation(fs.layout(), h));
  return covariance_vector(model.coupling(), fs.layout(), payoff, model.config.exec).dot(theta);
}

double InfluenceFunction::pair(const PerturbationVector& h) const {
  double s = 0.0;
  for (std::size_t i = 0; i < psi1.size(); ++i) s += h.h1[i] * psi1[i];
  for (std::size_t j = 0; j < psiv.size(); ++j) s += h.hv[j] * psiv[j];
  for (std::size_t k = 0; k < psi2.size(); ++k) s += h.h2[k] * psi2[k];
  return s;
}

InfluenceFunction influence_function(const CalibratedModel& model, std::span<const double> payoff) {
  const FisherSystem& fs = fisher_of(model);
  const StatisticLayout& l = fs.layout();
  const Eigen::VectorXd psi = fs.solve(covariance_vector(model.coupling(), l, payoff, model.config.exec));
  const Marginals m = marginals(model.coupling(), model.config.exec);
  InfluenceFunction out;
  auto embed = [&](std::size_t n, auto pos, const std::vector<double>& weights) {
    std::vector<double> v(n, 0.0);
    double mean = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
      const long a = pos(x);
      if (a >= 0) v[x] = psi(a);
      mean += weights[x] * v[x];
    }
    for (double& e : v) e -= mean;
    return v;
  };
  out.psi1 = embed(l.n1, [&](std::size_t x) { return l.s1_pos(x); }, m.s1.weights);
  out.psiv = embed(l.nv, [&](std::size_t x) { return l.v_pos(x); }, m.v.weights);
  out.psi2 = embed(l.n2, [&](std::size_t x) { return l.s2_pos(x); }, m.s2.weights);
  if (l.constraint_stats) {
    out.psi_constraints.assign(2 * l.n1 * l.nv, 0.0);
    for (std::size_t n = 0; n < l.n1 * l.nv; ++n)
      if (const long a = l.node_pos(n); a >= 0) {
        out.psi_constraints[2 * n] = psi(a);
        out.psi_constraints[2 * n + 1] = psi(a + 1);
      }
  }
  return out;
}

LinearResponse::LinearResponse(const CalibratedModel& model, const PerturbationVector& h) : model_(&model) {
  const FisherSystem& fs = fisher_of(model);
  const StatisticLayout& l = fs.layout();
  theta_ = fs.solve(reduce_perturbation(l, h));
  const GridSpec& g = model.grid;
  const double shift = theta_.dot(fs.means());
  const ConstraintFeatures feat(g);
  const std::size_t n2 = g.n2();
  const std::size_t nv = g.nv();
  const std::size_t nodes = g.nodes();
  weighted_field_.resize(g.size());
  const double* m = model.coupling().mass.data();
  std::vector<double> t2(n2, 0.0);
  for (std::size_t k = 0; k < n2; ++k)
    if (const long c = l.s2_pos(k); c >= 0) t2[k] = theta_(c);
#pragma omp parallel for schedule(static) if (model.config.exec == Exec::parallel)
  for (std::size_t n = 0; n < nodes; ++n) {
    const std::size_t i = n / nv;
    const std::size_t j = n % nv;
    const long a = l.s1_pos(i), b = l.v_pos(j), np = l.node_pos(n);
    const double base = (a >= 0 ? theta_(a) : 0.0) + (b >= 0 ? theta_(b) : 0.0) - shift;
    const double tm = np >= 0 ? theta_(np) : 0.0;
    const double tc = np >= 0 ? theta_(np + 1) : 0.0;
    for (std::size_t k = 0; k < n2; ++k) {
      const double phi = base + t2[k] + tm * feat.fm(i, k) + tc * feat.fc(i, j, k);
      weighted_field_[n * n2 + k] = m[n * n2 + k] * phi;
    }
  }
}

double LinearResponse::sensitivity(std::span<const double> payoff) const {
  if (payoff.size() != weighted_field_.size()) throw InputError("payoff is not tabulated on the coupling grid");
  double s = 0.0;
  for (std::size_t x = 0; x < payoff.size(); ++x) s += weighted_field_[x] * payoff[x];
  return s;
}

SecondOrderTable second_order_check(const CalibratedModel& model, std::span<const double> payoff, double derivative,
                                    const std::vector<double>& eps_list,
                                    const std::function<CalibratedModel(double)>& recalibrated) {
  SecondOrderTable t;
  t.value0 = expectation(model.coupling(), payoff);
  t.derivative = derivative;
  for (double eps : eps_list) {
    SecondOrderRow row;
    row.epsilon = eps;
    if (eps == 0.0) {
      row.value = t.value0;
    } else {
      const CalibratedModel m = recalibrated(eps);
      row.value = expectation(m.coupling(), payoff);
      row.remainder = std::abs(row.value - t.value0 - eps * derivative);
      row.normalized = row.remainder / (eps * eps);
      row.coupling_l1 = l1_distance(m.coupling().mass, model.coupling().mass);
      row.lipschitz = row.coupling_l1 / std::abs(eps);
    }
    t.rows.push_back(row);
  }
  for (std::size_t r = 0; r + 1 < t.rows.size(); ++r) {
    const auto& a = t.rows[r];
    const auto& b = t.rows[r + 1];
    if (a.epsilon == 0.0 || b.epsilon == 0.0) continue;
    t.remainder_ratios.push_back(a.remainder / b.remainder);
    t.lipschitz_ratios.push_back(a.lipschitz / b.lipschitz);
  }
  return t;
}

SecondOrderTable second_order_check(const CalibratedModel& model, std::span<const double> payoff,
                                    const BumpSpec& spec, const std::vector<double>& eps_list) {
  if (!model.snapshot) throw InputError("model carries no market snapshot");
  const PerturbationVector h = assemble_scenario(model, *model.snapshot, spec);
  const double d = LinearResponse(model, h).sensitivity(payoff);
  return second_order_check(model, payoff, d, eps_list, [&](double eps) {
    return recalibrate(model, bump_market(*model.snapshot, spec, eps, model.grid.v_scale));
  });
}

}  // namespace pot
