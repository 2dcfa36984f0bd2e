#include "pot/reference.hpp"

#include <cmath>

#include "pot/errors.hpp"

namespace pot::reference {

Coupling gibbs_coupling(const GridSpec& grid, std::span<const double> log_prior, const CalibrationState& state) {
  if (log_prior.size() != grid.size()) throw InputError("log prior does not match grid");
  Coupling mu{grid, std::vector<double>(grid.size())};
  double mx = -INFINITY;
  for (std::size_t i = 0; i < grid.n1(); ++i)
    for (std::size_t j = 0; j < grid.nv(); ++j)
      for (std::size_t k = 0; k < grid.n2(); ++k) {
        const std::size_t n = i * grid.nv() + j;
        const double x = grid.s2[k] / grid.s1[i];
        const double e = log_prior[grid.index(i, j, k)] + state.log_a[i] + state.log_b[j] + state.log_c[k] +
                         state.delta_m[n] * (grid.s2[k] - grid.s1[i]) +
                         state.delta_c[n] * (-2.0 / grid.tau * std::log(x) - grid.var_level(j));
        mu.mass[grid.index(i, j, k)] = e;
        mx = std::max(mx, e);
      }
  double total = 0.0;
  for (double& m : mu.mass) {
    m = std::exp(m - mx);
    total += m;
  }
  for (double& m : mu.mass) m /= total;
  return mu;
}

Marginals marginals(const Coupling& mu) {
  const GridSpec& g = mu.grid;
  Marginals out;
  out.s1 = {g.s1, std::vector<double>(g.n1(), 0.0)};
  out.v = {g.v, std::vector<double>(g.nv(), 0.0)};
  out.s2 = {g.s2, std::vector<double>(g.n2(), 0.0)};
  for (std::size_t i = 0; i < g.n1(); ++i)
    for (std::size_t j = 0; j < g.nv(); ++j)
      for (std::size_t k = 0; k < g.n2(); ++k) {
        const double w = mu(i, j, k);
        out.s1.weights[i] += w;
        out.v.weights[j] += w;
        out.s2.weights[k] += w;
      }
  return out;
}

double expectation(const Coupling& mu, std::span<const double> payoff) {
  if (payoff.size() != mu.mass.size()) throw InputError("payoff is not tabulated on the coupling grid");
  double s = 0.0;
  for (std::size_t x = 0; x < payoff.size(); ++x) s += mu.mass[x] * payoff[x];
  return s;
}

Eigen::VectorXd statistics(const GridSpec& g, const StatisticLayout& l, std::size_t i, std::size_t j, std::size_t k) {
  Eigen::VectorXd t = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l.dim()));
  if (const long p = l.s1_pos(i); p >= 0) t(p) = 1.0;
  if (const long p = l.v_pos(j); p >= 0) t(p) = 1.0;
  if (const long p = l.s2_pos(k); p >= 0) t(p) = 1.0;
  if (const long p = l.node_pos(i * g.nv() + j); p >= 0) {
    t(p) = g.s2[k] - g.s1[i];
    t(p + 1) = g.log_payoff(g.s2[k] / g.s1[i]) - g.var_level(j);
  }
  return t;
}

Eigen::MatrixXd fisher_dense(const Coupling& mu, const StatisticLayout& l) {
  const GridSpec& g = mu.grid;
  const auto dim = static_cast<Eigen::Index>(l.dim());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (std::size_t i = 0; i < g.n1(); ++i)
    for (std::size_t j = 0; j < g.nv(); ++j)
      for (std::size_t k = 0; k < g.n2(); ++k) mean += mu(i, j, k) * statistics(g, l, i, j, k);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
  for (std::size_t i = 0; i < g.n1(); ++i)
    for (std::size_t j = 0; j < g.nv(); ++j)
      for (std::size_t k = 0; k < g.n2(); ++k) {
        const Eigen::VectorXd d = statistics(g, l, i, j, k) - mean;
        h.noalias() += mu(i, j, k) * d * d.transpose();
      }
  return h;
}

Eigen::VectorXd covariance_vector(const Coupling& mu, const StatisticLayout& l, std::span<const double> payoff) {
  const GridSpec& g = mu.grid;
  const double eg = reference::expectation(mu, payoff);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l.dim()));
  for (std::size_t i = 0; i < g.n1(); ++i)
    for (std::size_t j = 0; j < g.nv(); ++j)
      for (std::size_t k = 0; k < g.n2(); ++k) {
        const std::size_t x = g.index(i, j, k);
        out += mu.mass[x] * (payoff[x] - eg) * statistics(g, l, i, j, k);
      }
  return out;
}

}  // namespace pot::reference
