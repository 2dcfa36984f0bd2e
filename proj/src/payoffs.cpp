#include "pot/payoffs.hpp"

#include <algorithm>
#include <array>
#include <utility>

#include "pot/errors.hpp"

namespace pot {
namespace {

constexpr std::array<std::pair<PayoffKind, const char*>, 10> kNames{{
    {PayoffKind::constant, "constant"},
    {PayoffKind::vix_future, "vix_future"},
    {PayoffKind::vix_call, "vix_call"},
    {PayoffKind::vix_put, "vix_put"},
    {PayoffKind::spx_call_t1, "spx_call_t1"},
    {PayoffKind::spx_put_t1, "spx_put_t1"},
    {PayoffKind::spx_call_t2, "spx_call_t2"},
    {PayoffKind::spx_put_t2, "spx_put_t2"},
    {PayoffKind::forward_start_call, "forward_start_call"},
    {PayoffKind::forward_start_put, "forward_start_put"},
}};

}  // namespace

PayoffKind payoff_kind_from_string(const std::string& s) {
  for (const auto& [k, name] : kNames)
    if (s == name) return k;
  throw InputError("unknown payoff kind '" + s + "'");
}

std::string to_string(PayoffKind kind) {
  for (const auto& [k, name] : kNames)
    if (k == kind) return name;
  return "unknown";
}

bool is_vix_payoff(PayoffKind kind) {
  return kind == PayoffKind::vix_future || kind == PayoffKind::vix_call || kind == PayoffKind::vix_put;
}

std::vector<double> tabulate(const PayoffSpec& spec, const GridSpec& grid) {
  const double k = spec.strike;
  std::vector<double> g(grid.size());
  for (std::size_t i = 0; i < grid.n1(); ++i)
    for (std::size_t j = 0; j < grid.nv(); ++j)
      for (std::size_t l = 0; l < grid.n2(); ++l) {
        const double s1 = grid.s1[i];
        const double v = grid.v[j];
        const double s2 = grid.s2[l];
        double x = 0.0;
        switch (spec.kind) {
          case PayoffKind::constant: x = 1.0; break;
          case PayoffKind::vix_future: x = v; break;
          case PayoffKind::vix_call: x = std::max(v - k, 0.0); break;
          case PayoffKind::vix_put: x = std::max(k - v, 0.0); break;
          case PayoffKind::spx_call_t1: x = std::max(s1 - k, 0.0); break;
          case PayoffKind::spx_put_t1: x = std::max(k - s1, 0.0); break;
          case PayoffKind::spx_call_t2: x = std::max(s2 - k, 0.0); break;
          case PayoffKind::spx_put_t2: x = std::max(k - s2, 0.0); break;
          case PayoffKind::forward_start_call: x = std::max(s2 / s1 - k, 0.0); break;
          case PayoffKind::forward_start_put: x = std::max(k - s2 / s1, 0.0); break;
        }
        g[grid.index(i, j, l)] = spec.weight * x;
      }
  return g;
}

}  // namespace pot
