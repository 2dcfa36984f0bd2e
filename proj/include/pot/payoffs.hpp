#pragma once

#include <string>
#include <vector>

#include "pot/grids_coupling.hpp"

namespace pot {

enum class PayoffKind {
  constant,
  vix_future,
  vix_call,
  vix_put,
  spx_call_t1,
  spx_put_t1,
  spx_call_t2,
  spx_put_t2,
  forward_start_call,  // (s2/s1 - K)+
  forward_start_put,
};

struct PayoffSpec {
  std::string id;
  PayoffKind kind = PayoffKind::vix_future;
  double strike = 0.0;
  double weight = 1.0;
};

PayoffKind payoff_kind_from_string(const std::string& s);
std::string to_string(PayoffKind kind);

// G(s1, v, s2) on the full grid, scaled by weight. VIX payoffs are in index points.
std::vector<double> tabulate(const PayoffSpec& spec, const GridSpec& grid);

// True when G depends on v only.
bool is_vix_payoff(PayoffKind kind);

}  // namespace pot
