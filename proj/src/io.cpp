#include "pot/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "pot/errors.hpp"

namespace pot {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw InputError("cannot read " + path.string());
  return ss.str();
}

Json parse_json(std::string_view text, const std::string& source) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    throw InputError(source + ": malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

Json load_json(const std::filesystem::path& path) { return parse_json(read_file(path), path.string()); }

void atomic_write(const std::filesystem::path& path, std::string_view content) {
  const std::filesystem::path dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory " + dir.string() + ": " + ec.message());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp, ec);
      throw InputError("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignore;
    std::filesystem::remove(tmp, ignore);
    throw InputError("cannot rename onto " + path.string() + ": " + ec.message());
  }
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c) text_ += ',';
    text_ += header[c];
  }
  text_ += '\n';
}

CsvWriter& CsvWriter::cell(const std::string& s) {
  if (s.find_first_of(",\n\"") != std::string::npos) throw InputError("CSV cell contains a separator: " + s);
  if (pending_) text_ += ',';
  text_ += s;
  ++pending_;
  return *this;
}

CsvWriter& CsvWriter::cell(double x) { return cell(format_double(x)); }
CsvWriter& CsvWriter::cell(long x) { return cell(std::to_string(x)); }

void CsvWriter::end_row() {
  if (pending_ != columns_) throw InputError("CSV row has the wrong number of cells");
  text_ += '\n';
  pending_ = 0;
  ++rows_;
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == name) return c;
  throw InputError("CSV column missing: " + name);
}

CsvTable parse_csv(std::string_view text, const std::string& source) {
  CsvTable t;
  auto split = [](std::string_view line) {
    std::vector<std::string> out;
    std::size_t b = 0;
    while (true) {
      const std::size_t e = line.find(',', b);
      out.emplace_back(line.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b));
      if (e == std::string_view::npos) break;
      b = e + 1;
    }
    return out;
  };
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t e = text.find('\n', pos);
    if (e == std::string_view::npos) e = text.size();
    std::string_view line = text.substr(pos, e - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = e + 1;
    ++line_no;
    if (line.empty()) continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw InputError(source + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw InputError(source + ": empty CSV");
  return t;
}

namespace {

// Checked view of a JSON object at a given path.
class Obj {
 public:
  Obj(const Json& j, std::string path, std::initializer_list<const char*> allowed) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw InputError(path_ + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
      if (!ok.count(k)) throw InputError(at(k) + ": unknown field");
  }

  std::string at(const std::string& key) const { return path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const Json& raw(const std::string& key) const {
    if (!has(key)) throw InputError(at(key) + ": required field missing");
    return j_.at(key);
  }

  double number(const std::string& key) const {
    const Json& v = raw(key);
    if (!v.is_number()) throw InputError(at(key) + ": expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw InputError(at(key) + ": must be finite");
    return x;
  }
  double number(const std::string& key, double def) const { return has(key) ? number(key) : def; }
  double positive(const std::string& key, double def) const {
    const double x = number(key, def);
    if (!(x > 0.0)) throw InputError(at(key) + ": must be positive");
    return x;
  }
  double nonnegative(const std::string& key, double def) const {
    const double x = number(key, def);
    if (!(x >= 0.0)) throw InputError(at(key) + ": must be nonnegative");
    return x;
  }
  double positive(const std::string& key) const {
    const double x = number(key);
    if (!(x > 0.0)) throw InputError(at(key) + ": must be positive");
    return x;
  }

  long integer(const std::string& key, long def, long min) const {
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_number_integer()) throw InputError(at(key) + ": expected an integer");
    const long x = v.get<long>();
    if (x < min) throw InputError(at(key) + ": must be at least " + std::to_string(min));
    return x;
  }

  bool boolean(const std::string& key, bool def) const {
    if (!has(key)) return def;
    if (!j_.at(key).is_boolean()) throw InputError(at(key) + ": expected a boolean");
    return j_.at(key).get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) const {
    if (!has(key)) return def;
    if (!j_.at(key).is_string()) throw InputError(at(key) + ": expected a string");
    return j_.at(key).get<std::string>();
  }
  std::string string(const std::string& key) const {
    raw(key);
    return string(key, "");
  }

  std::vector<double> numbers(const std::string& key) const {
    const Json& v = raw(key);
    if (!v.is_array()) throw InputError(at(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw InputError(at(key) + "[" + std::to_string(i) + "]: expected a number");
      out.push_back(v[i].get<double>());
      if (!std::isfinite(out.back())) throw InputError(at(key) + "[" + std::to_string(i) + "]: must be finite");
    }
    return out;
  }

 private:
  const Json& j_;
  std::string path_;
};

// Runs a domain validator and reattaches the JSON path to its message.
template <class F>
void validated(const std::string& path, F&& f) {
  try {
    f();
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

VolSmile smile_from_json(const Json& j, const std::string& path, double expiry, double forward) {
  const Obj o(j, path, {"expiry", "forward", "strikes", "vols"});
  VolSmile s;
  s.expiry = o.positive("expiry", expiry);
  s.forward = o.positive("forward", forward);
  s.strikes = o.numbers("strikes");
  s.vols = o.numbers("vols");
  validated(path, [&] { s.validate(); });
  return s;
}

Json smile_to_json(const VolSmile& s) {
  return Json{{"expiry", s.expiry}, {"forward", s.forward}, {"strikes", s.strikes}, {"vols", s.vols}};
}

Json law_to_json(const MarginalLaw& m) { return Json{{"grid", m.grid}, {"weights", m.weights}}; }

MarginalLaw law_from_json(const Json& j, const std::string& path) {
  const Obj o(j, path, {"grid", "weights"});
  MarginalLaw m{o.numbers("grid"), o.numbers("weights")};
  validated(path, [&] { m.validate(1e-9); });
  return m;
}

Json targets_to_json(const Targets& t) {
  return Json{{"s1", law_to_json(t.s1)}, {"v", law_to_json(t.v)}, {"s2", law_to_json(t.s2)}};
}

Targets targets_from_json(const Json& j, const std::string& path) {
  const Obj o(j, path, {"s1", "v", "s2"});
  return {law_from_json(o.raw("s1"), o.at("s1")), law_from_json(o.raw("v"), o.at("v")),
          law_from_json(o.raw("s2"), o.at("s2"))};
}

SsrParams ssr_from_json(const Json& j, const std::string& path, const SsrParams& def) {
  const Obj o(j, path, {"value", "bandwidth", "convexity", "lower_cutoff", "upper_cutoff"});
  SsrParams p = def;
  p.ssr = o.number("value", def.ssr);
  p.bandwidth = o.positive("bandwidth", def.bandwidth);
  p.convexity = o.boolean("convexity", def.convexity);
  if (o.has("lower_cutoff")) p.lower_cutoff = o.number("lower_cutoff");
  if (o.has("upper_cutoff")) p.upper_cutoff = o.number("upper_cutoff");
  validated(path, [&] { p.validate(); });
  return p;
}

Json ssr_to_json(const SsrParams& p) {
  Json j{{"value", p.ssr}, {"bandwidth", p.bandwidth}, {"convexity", p.convexity}};
  if (p.lower_cutoff) j["lower_cutoff"] = *p.lower_cutoff;
  if (p.upper_cutoff) j["upper_cutoff"] = *p.upper_cutoff;
  return j;
}

BumpSpec scenario_with_default(const Json& j, const std::string& path, const SsrParams& ssr, std::size_t idx) {
  const Obj o(j, path, {"id", "kind", "size", "ssr"});
  BumpSpec s;
  s.ssr = ssr;
  s.id = o.string("id", "scenario" + std::to_string(idx));
  try {
    s.kind = bump_kind_from_string(o.string("kind"));
  } catch (const InputError& e) {
    throw InputError(o.at("kind") + ": " + e.what());
  }
  // Zero is the null scenario: LR and DR report 0, recalibration rejects it.
  s.size = o.nonnegative("size", s.size);
  if (o.has("ssr")) s.ssr = ssr_from_json(o.raw("ssr"), o.at("ssr"), ssr);
  return s;
}

std::vector<BumpSpec> scenario_list(const Json& j, const std::string& path, const SsrParams& ssr) {
  std::vector<BumpSpec> out;
  if (j.is_object() && !j.contains("scenarios")) {
    out.push_back(scenario_with_default(j, path, ssr, 0));
    return out;
  }
  const Json* arr = &j;
  std::string p = path;
  if (j.is_object()) {
    const Obj o(j, path, {"scenarios"});
    arr = &o.raw("scenarios");
    p = o.at("scenarios");
  }
  if (!arr->is_array()) throw InputError(p + ": expected an array of scenarios");
  for (std::size_t i = 0; i < arr->size(); ++i)
    out.push_back(scenario_with_default((*arr)[i], p + "[" + std::to_string(i) + "]", ssr, i));
  std::set<std::string> ids;
  for (const auto& s : out)
    if (!ids.insert(s.id).second) throw InputError(p + ": duplicate scenario id " + s.id);
  return out;
}

GridConfig grid_from_json(const Json& j, const std::string& path) {
  const Obj o(j, path, {"n1", "nv", "n2", "coverage", "v_lo", "v_hi", "v_scale"});
  GridConfig g;
  g.n1 = static_cast<std::size_t>(o.integer("n1", static_cast<long>(g.n1), 2));
  g.nv = static_cast<std::size_t>(o.integer("nv", static_cast<long>(g.nv), 2));
  g.n2 = static_cast<std::size_t>(o.integer("n2", static_cast<long>(g.n2), 2));
  g.coverage = o.positive("coverage", g.coverage);
  g.v_lo = o.positive("v_lo", g.v_lo);
  g.v_hi = o.positive("v_hi", g.v_hi);
  g.v_scale = o.positive("v_scale", g.v_scale);
  if (!(g.v_hi > g.v_lo)) throw InputError(o.at("v_hi") + ": must exceed v_lo");
  return g;
}

Json grid_config_to_json(const GridConfig& g) {
  return Json{{"n1", g.n1},         {"nv", g.nv},     {"n2", g.n2},          {"coverage", g.coverage},
              {"v_lo", g.v_lo},     {"v_hi", g.v_hi}, {"v_scale", g.v_scale}};
}

CalibConfig calib_from_json(const Json& j, const std::string& path) {
  const Obj o(j, path, {"eps_marg", "eps_fin", "lambda", "max_outer", "max_inner", "enforce_constraints"});
  CalibConfig c;
  c.eps_marg = o.positive("eps_marg", c.eps_marg);
  c.eps_fin = o.positive("eps_fin", c.eps_fin);
  c.lambda = o.number("lambda", c.lambda);
  if (c.lambda < 0.0) throw InputError(o.at("lambda") + ": must be nonnegative");
  c.max_outer = static_cast<int>(o.integer("max_outer", c.max_outer, 1));
  c.max_inner = static_cast<int>(o.integer("max_inner", c.max_inner, 1));
  c.enforce_constraints = o.boolean("enforce_constraints", c.enforce_constraints);
  return c;
}

Json calib_to_json(const CalibConfig& c) {
  return Json{{"eps_marg", c.eps_marg},   {"eps_fin", c.eps_fin},     {"lambda", c.lambda},
              {"max_outer", c.max_outer}, {"max_inner", c.max_inner}, {"enforce_constraints", c.enforce_constraints}};
}

SyntheticMarketConfig market_from_json(const Json& j, const std::string& path) {
  const Obj o(j, path,
              {"spot", "t1", "t2", "spx_atm_vol", "spx_skew", "spx_curvature", "spx_min_vol", "spx_saturation",
               "vix_future", "vix_atm_vol", "vix_skew", "vix_saturation", "vix_min_vol", "vix_strikes", "v_scale",
               "basis", "quad_s1", "quad_v"});
  SyntheticMarketConfig m;
  m.spot = o.positive("spot", m.spot);
  m.t1 = o.positive("t1", m.t1);
  m.t2 = o.positive("t2", m.t2);
  if (!(m.t2 > m.t1)) throw InputError(o.at("t2") + ": must exceed t1");
  m.spx_atm_vol = o.positive("spx_atm_vol", m.spx_atm_vol);
  m.spx_skew = o.number("spx_skew", m.spx_skew);
  m.spx_curvature = o.number("spx_curvature", m.spx_curvature);
  m.spx_min_vol = o.positive("spx_min_vol", m.spx_min_vol);
  m.spx_saturation = o.positive("spx_saturation", m.spx_saturation);
  m.vix_future = o.positive("vix_future", m.vix_future);
  m.vix_atm_vol = o.positive("vix_atm_vol", m.vix_atm_vol);
  m.vix_skew = o.number("vix_skew", m.vix_skew);
  m.vix_saturation = o.positive("vix_saturation", m.vix_saturation);
  m.vix_min_vol = o.positive("vix_min_vol", m.vix_min_vol);
  if (o.has("vix_strikes")) m.vix_strikes = o.numbers("vix_strikes");
  m.v_scale = o.positive("v_scale", m.v_scale);
  m.basis = o.number("basis", m.basis);
  m.quad_s1 = static_cast<int>(o.integer("quad_s1", m.quad_s1, 8));
  m.quad_v = static_cast<int>(o.integer("quad_v", m.quad_v, 8));
  return m;
}

Json market_to_json(const SyntheticMarketConfig& m) {
  return Json{{"spot", m.spot},
              {"t1", m.t1},
              {"t2", m.t2},
              {"spx_atm_vol", m.spx_atm_vol},
              {"spx_skew", m.spx_skew},
              {"spx_curvature", m.spx_curvature},
              {"spx_min_vol", m.spx_min_vol},
              {"spx_saturation", m.spx_saturation},
              {"vix_future", m.vix_future},
              {"vix_atm_vol", m.vix_atm_vol},
              {"vix_skew", m.vix_skew},
              {"vix_saturation", m.vix_saturation},
              {"vix_min_vol", m.vix_min_vol},
              {"vix_strikes", m.vix_strikes},
              {"v_scale", m.v_scale},
              {"basis", m.basis},
              {"quad_s1", m.quad_s1},
              {"quad_v", m.quad_v}};
}

void backtest_from_json(const Json& j, const std::string& path, BacktestConfig& b) {
  const Obj o(j, path,
              {"days", "dt", "vol_of_vol", "n_portfolios", "recalib_every", "window", "dr_epsilon", "seed", "nv"});
  b.days = static_cast<int>(o.integer("days", b.days, 2));
  b.dt = o.positive("dt", b.dt);
  b.vol_of_vol = o.number("vol_of_vol", b.vol_of_vol);
  if (b.vol_of_vol < 0.0) throw InputError(o.at("vol_of_vol") + ": must be nonnegative");
  b.n_portfolios = static_cast<int>(o.integer("n_portfolios", b.n_portfolios, 0));
  b.recalib_every = static_cast<int>(o.integer("recalib_every", b.recalib_every, 1));
  b.window = static_cast<int>(o.integer("window", b.window, 2));
  b.dr_epsilon = o.positive("dr_epsilon", b.dr_epsilon);
  b.seed = static_cast<std::uint64_t>(o.integer("seed", static_cast<long>(b.seed), 0));
  if (o.has("nv")) b.grid.nv = static_cast<std::size_t>(o.integer("nv", 0, 2));
  if (b.window > b.days - 1) throw InputError(o.at("window") + ": exceeds the number of P&L days");
}

}  // namespace

MarketSnapshot snapshot_from_json(const Json& j, const std::string& path) {
  const Obj o(j, path, {"spot", "t1", "t2", "smiles", "vix_future", "basis"});
  MarketSnapshot s;
  s.spot = o.positive("spot");
  s.t1 = o.positive("t1");
  s.t2 = o.positive("t2");
  s.vix_future = o.positive("vix_future");
  s.basis = o.number("basis", 0.0);
  const Obj sm(o.raw("smiles"), o.at("smiles"), {"spx_t1", "spx_t2", "vix"});
  s.spx_t1 = smile_from_json(sm.raw("spx_t1"), sm.at("spx_t1"), s.t1, s.spot);
  s.spx_t2 = smile_from_json(sm.raw("spx_t2"), sm.at("spx_t2"), s.t2, s.spot);
  s.vix = smile_from_json(sm.raw("vix"), sm.at("vix"), s.t1, s.vix_future);
  validated(path, [&] { s.validate(); });
  return s;
}

Json snapshot_to_json(const MarketSnapshot& s) {
  return Json{{"spot", s.spot},
              {"t1", s.t1},
              {"t2", s.t2},
              {"smiles", {{"spx_t1", smile_to_json(s.spx_t1)}, {"spx_t2", smile_to_json(s.spx_t2)},
                          {"vix", smile_to_json(s.vix)}}},
              {"vix_future", s.vix_future},
              {"basis", s.basis}};
}

BumpSpec scenario_from_json(const Json& j, const std::string& path) { return scenario_with_default(j, path, {}, 0); }

Json scenario_to_json(const BumpSpec& spec) {
  return Json{{"id", spec.id}, {"kind", to_string(spec.kind)}, {"size", spec.size}, {"ssr", ssr_to_json(spec.ssr)}};
}

std::vector<BumpSpec> scenarios_from_json(const Json& j, const std::string& path) { return scenario_list(j, path, {}); }

PayoffSpec payoff_from_json(const Json& j, const std::string& path) {
  const Obj o(j, path, {"id", "kind", "strike", "weight"});
  PayoffSpec p;
  try {
    p.kind = payoff_kind_from_string(o.string("kind"));
  } catch (const InputError& e) {
    throw InputError(o.at("kind") + ": " + e.what());
  }
  p.id = o.string("id", to_string(p.kind));
  const bool needs_strike = p.kind != PayoffKind::constant && p.kind != PayoffKind::vix_future;
  p.strike = needs_strike ? o.positive("strike") : o.number("strike", 0.0);
  p.weight = o.number("weight", 1.0);
  return p;
}

Json payoff_to_json(const PayoffSpec& p) {
  return Json{{"id", p.id}, {"kind", to_string(p.kind)}, {"strike", p.strike}, {"weight", p.weight}};
}

std::vector<PayoffSpec> payoffs_from_json(const Json& j, const std::string& path) {
  const Json* arr = &j;
  std::string p = path;
  if (j.is_object()) {
    const Obj o(j, path, {"payoffs"});
    arr = &o.raw("payoffs");
    p = o.at("payoffs");
  }
  if (!arr->is_array()) throw InputError(p + ": expected an array of payoffs");
  std::vector<PayoffSpec> out;
  for (std::size_t i = 0; i < arr->size(); ++i) out.push_back(payoff_from_json((*arr)[i], p + "[" + std::to_string(i) + "]"));
  std::set<std::string> ids;
  for (const auto& x : out)
    if (!ids.insert(x.id).second) throw InputError(p + ": duplicate payoff id " + x.id);
  return out;
}

RunConfig run_config_from_json(const Json& j) {
  const Obj o(j, "$",
              {"grid", "calibration", "fisher", "ssr", "scenarios", "payoffs", "market", "backtest", "out", "seed",
               "threads"});
  RunConfig c;
  if (o.has("grid")) c.grid = grid_from_json(o.raw("grid"), o.at("grid"));
  if (o.has("calibration")) c.calib = calib_from_json(o.raw("calibration"), o.at("calibration"));
  if (o.has("fisher")) {
    const Obj f(o.raw("fisher"), o.at("fisher"), {"lambda"});
    c.fisher_lambda = f.number("lambda", 0.0);
    if (c.fisher_lambda < 0.0) throw InputError(f.at("lambda") + ": must be nonnegative");
  }
  if (o.has("ssr")) c.ssr = ssr_from_json(o.raw("ssr"), o.at("ssr"), c.ssr);
  if (o.has("scenarios")) c.scenarios = scenario_list(o.raw("scenarios"), o.at("scenarios"), c.ssr);
  if (o.has("payoffs")) c.payoffs = payoffs_from_json(o.raw("payoffs"), o.at("payoffs"));
  if (o.has("market")) c.market = market_from_json(o.raw("market"), o.at("market"));
  c.backtest.grid = c.grid;
  c.backtest.calib = c.calib;
  c.backtest.ssr = c.ssr;
  c.backtest.market = c.market;
  if (o.has("backtest")) backtest_from_json(o.raw("backtest"), o.at("backtest"), c.backtest);
  c.out = o.string("out", "");
  if (o.has("seed")) c.seed = static_cast<std::uint64_t>(o.integer("seed", 0, 0));
  c.threads = static_cast<int>(o.integer("threads", 0, 0));
  return c;
}

Json run_config_to_json(const RunConfig& c) {
  Json scen = Json::array();
  for (const auto& s : c.scenarios) scen.push_back(scenario_to_json(s));
  Json pay = Json::array();
  for (const auto& p : c.payoffs) pay.push_back(payoff_to_json(p));
  const BacktestConfig& b = c.backtest;
  Json j{{"grid", grid_config_to_json(c.grid)},
         {"calibration", calib_to_json(c.calib)},
         {"fisher", {{"lambda", c.fisher_lambda}}},
         {"ssr", ssr_to_json(c.ssr)},
         {"scenarios", scen},
         {"payoffs", pay},
         {"market", market_to_json(c.market)},
         {"backtest",
          {{"days", b.days},
           {"dt", b.dt},
           {"vol_of_vol", b.vol_of_vol},
           {"n_portfolios", b.n_portfolios},
           {"recalib_every", b.recalib_every},
           {"window", b.window},
           {"dr_epsilon", b.dr_epsilon},
           {"seed", b.seed},
           {"nv", b.grid.nv}}},
         {"threads", c.threads}};
  if (!c.out.empty()) j["out"] = c.out;
  if (c.seed) j["seed"] = *c.seed;
  return j;
}

Json model_to_json(const CalibratedModel& m) {
  const CalibrationState& s = m.state;
  const CalibDiagnostics& d = m.diagnostics;
  Json j{{"format", "pot-model"},
         {"version", 1},
         {"grid",
          {{"s1", m.grid.s1},
           {"v", m.grid.v},
           {"s2", m.grid.s2},
           {"tau", m.grid.tau},
           {"v_scale", m.grid.v_scale},
           {"basis", m.grid.basis}}},
         {"prior_marginals", targets_to_json(m.prior_marginals)},
         {"targets", targets_to_json(m.targets)},
         {"state",
          {{"log_a", s.log_a},
           {"log_b", s.log_b},
           {"log_c", s.log_c},
           {"delta_m", s.delta_m},
           {"delta_c", s.delta_c},
           {"outer_iterations", s.outer_iterations},
           {"newton_steps", s.newton_steps}}},
         {"config", calib_to_json(m.config)},
         {"diagnostics",
          {{"marg_err_s1", d.marg_err_s1},
           {"marg_err_v", d.marg_err_v},
           {"marg_err_s2", d.marg_err_s2},
           {"max_abs_rm", d.max_abs_rm},
           {"max_abs_rc", d.max_abs_rc},
           {"outer_iterations", d.outer_iterations},
           {"newton_steps", d.newton_steps}}},
         {"snapshot", m.snapshot ? snapshot_to_json(*m.snapshot) : Json(nullptr)}};
  return j;
}

CalibratedModel model_from_json(const Json& j) {
  const Obj o(j, "$",
              {"format", "version", "grid", "prior_marginals", "targets", "state", "config", "diagnostics", "snapshot"});
  if (o.string("format") != "pot-model") throw InputError("$.format: not a model file");
  if (o.integer("version", 0, 0) != 1) throw InputError("$.version: unsupported model version");
  CalibratedModel m;
  {
    const Obj g(o.raw("grid"), o.at("grid"), {"s1", "v", "s2", "tau", "v_scale", "basis"});
    m.grid.s1 = g.numbers("s1");
    m.grid.v = g.numbers("v");
    m.grid.s2 = g.numbers("s2");
    m.grid.tau = g.positive("tau");
    m.grid.v_scale = g.positive("v_scale");
    m.grid.basis = g.number("basis", 0.0);
    validated(o.at("grid"), [&] { m.grid.validate(); });
  }
  m.prior_marginals = targets_from_json(o.raw("prior_marginals"), o.at("prior_marginals"));
  m.targets = targets_from_json(o.raw("targets"), o.at("targets"));
  for (const Targets* t : {&m.prior_marginals, &m.targets})
    if (t->s1.size() != m.grid.n1() || t->v.size() != m.grid.nv() || t->s2.size() != m.grid.n2())
      throw InputError("$.targets: marginal sizes do not match the grid");
  m.config = calib_from_json(o.raw("config"), o.at("config"));
  {
    const Obj s(o.raw("state"), o.at("state"),
                {"log_a", "log_b", "log_c", "delta_m", "delta_c", "outer_iterations", "newton_steps"});
    CalibrationState& st = m.state;
    st.log_a = s.numbers("log_a");
    st.log_b = s.numbers("log_b");
    st.log_c = s.numbers("log_c");
    st.delta_m = s.numbers("delta_m");
    st.delta_c = s.numbers("delta_c");
    st.outer_iterations = static_cast<int>(s.integer("outer_iterations", 0, 0));
    st.newton_steps = s.integer("newton_steps", 0, 0);
    if (st.log_a.size() != m.grid.n1() || st.log_b.size() != m.grid.nv() || st.log_c.size() != m.grid.n2() ||
        st.delta_m.size() != m.grid.nodes() || st.delta_c.size() != m.grid.nodes())
      throw InputError("$.state: sizes do not match the grid");
  }
  {
    const Obj d(o.raw("diagnostics"), o.at("diagnostics"),
                {"marg_err_s1", "marg_err_v", "marg_err_s2", "max_abs_rm", "max_abs_rc", "outer_iterations",
                 "newton_steps"});
    CalibDiagnostics& g = m.diagnostics;
    g.marg_err_s1 = d.number("marg_err_s1", 0.0);
    g.marg_err_v = d.number("marg_err_v", 0.0);
    g.marg_err_s2 = d.number("marg_err_s2", 0.0);
    g.max_abs_rm = d.number("max_abs_rm", 0.0);
    g.max_abs_rc = d.number("max_abs_rc", 0.0);
    g.outer_iterations = static_cast<int>(d.integer("outer_iterations", 0, 0));
    g.newton_steps = d.integer("newton_steps", 0, 0);
  }
  if (o.has("snapshot")) m.snapshot = snapshot_from_json(o.raw("snapshot"), o.at("snapshot"));

  const Coupling prior = build_prior(m.grid, m.prior_marginals.s1, m.prior_marginals.v);
  m.log_prior.resize(prior.mass.size());
  for (std::size_t x = 0; x < prior.mass.size(); ++x) m.log_prior[x] = std::log(prior.mass[x]);
  m.state.coupling.grid = m.grid;
  refresh_coupling(m);
  return m;
}

std::string coupling_csv(const Coupling& mu) {
  CsvWriter w({"i", "j", "k", "mass"});
  const GridSpec& g = mu.grid;
  for (std::size_t i = 0; i < g.n1(); ++i)
    for (std::size_t j = 0; j < g.nv(); ++j)
      for (std::size_t k = 0; k < g.n2(); ++k) {
        w.cell(i).cell(j).cell(k).cell(mu(i, j, k));
        w.end_row();
      }
  return w.str();
}

}  // namespace pot
