#include "pot/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "pot/backtest.hpp"
#include "pot/dr_engine.hpp"
#include "pot/errors.hpp"
#include "pot/fisher_response.hpp"
#include "pot/io.hpp"
#include "pot/parallel.hpp"
#include "pot/synthetic.hpp"

namespace pot {

namespace fs = std::filesystem;

RiskMethod risk_method_from_string(const std::string& s) {
  if (s == "lr") return RiskMethod::lr;
  if (s == "dr") return RiskMethod::dr;
  if (s == "recalib") return RiskMethod::recalib;
  throw InputError("unknown risk method '" + s + "'");
}

const char* to_string(RiskMethod m) {
  switch (m) {
    case RiskMethod::lr: return "LR";
    case RiskMethod::dr: return "DR";
    case RiskMethod::recalib: return "RECALIB";
  }
  return "?";
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

std::vector<RiskRow> compute_risk(CalibratedModel& model, const std::vector<BumpSpec>& scenarios,
                                  const std::vector<PayoffSpec>& payoffs, RiskMethod method, double fisher_lambda,
                                  RiskTiming* timing) {
  if (!model.snapshot) throw InputError("model file carries no market snapshot; scenarios cannot be assembled");
  RiskTiming t;
  std::vector<std::vector<double>> tables;
  std::vector<double> pi0;
  for (const auto& p : payoffs) {
    tables.push_back(tabulate(p, model.grid));
    pi0.push_back(expectation(model.coupling(), tables.back(), model.config.exec));
  }

  auto t0 = Clock::now();
  std::optional<DrEngine> engine;
  if (method == RiskMethod::lr && !model.fisher) attach_fisher(model, fisher_lambda);
  if (method == RiskMethod::dr) engine.emplace(model.coupling(), model.config.exec);
  t.prepare_ms = ms_since(t0);

  std::vector<RiskRow> rows;
  for (const auto& sc : scenarios) {
    std::vector<double> sens(payoffs.size());
    double method_ms = 0.0;
    if (method == RiskMethod::recalib) {
      if (sc.size == 0.0) throw InputError("scenario " + sc.id + ": recalibration needs a nonzero bump size");
      t0 = Clock::now();
      const CalibratedModel up = recalibrate(model, bump_market(*model.snapshot, sc, sc.size, model.grid.v_scale));
      const CalibratedModel dn = recalibrate(model, bump_market(*model.snapshot, sc, -sc.size, model.grid.v_scale));
      for (std::size_t p = 0; p < payoffs.size(); ++p)
        sens[p] = (expectation(up.coupling(), tables[p], model.config.exec) -
                   expectation(dn.coupling(), tables[p], model.config.exec)) /
                  (2.0 * sc.size);
      method_ms = ms_since(t0);
    } else {
      t0 = Clock::now();
      const PerturbationVector h = assemble_scenario(model, *model.snapshot, sc);
      t.scenario_ms += ms_since(t0);
      t0 = Clock::now();
      if (method == RiskMethod::lr) {
        const LinearResponse lr(model, h);
        for (std::size_t p = 0; p < payoffs.size(); ++p) sens[p] = lr.sensitivity(tables[p]);
      } else if (!payoffs.empty() && !h.is_zero()) {
        int sweeps = 0;
        sens = engine->greeks(tables, h, sc.size, false, &sweeps);
        spdlog::debug("DR scenario {}: {} IPFP sweeps", sc.id, sweeps);
      }
      method_ms = ms_since(t0);
    }
    t.method_ms += method_ms;
    for (std::size_t p = 0; p < payoffs.size(); ++p)
      rows.push_back({payoffs[p].id, sc.id, method, pi0[p], sens[p], method_ms / static_cast<double>(payoffs.size())});
  }
  spdlog::info("{} timing: prepare {:.3f} ms, scenarios {:.3f} ms, method {:.3f} ms", to_string(method), t.prepare_ms,
               t.scenario_ms, t.method_ms);
  if (timing) *timing = t;
  return rows;
}

std::string risk_csv(const std::vector<RiskRow>& rows) {
  CsvWriter w({"payoff", "scenario", "method", "pi0", "sensitivity", "wall_ms"});
  for (const auto& r : rows) {
    w.cell(r.payoff).cell(r.scenario).cell(std::string(to_string(r.method))).cell(r.pi0).cell(r.sensitivity);
    w.cell(r.wall_ms);
    w.end_row();
  }
  return w.str();
}

namespace {

void setup_logging() {
  auto logger = spdlog::get("pot");
  if (!logger) {
    logger = std::make_shared<spdlog::logger>("pot", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    spdlog::register_logger(logger);
  }
  spdlog::set_default_logger(logger);
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("POT_LOG")) {
    level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; keep warnings in that case.
    if (level == spdlog::level::off && std::string(env) != "off") level = spdlog::level::warn;
  }
  spdlog::set_level(level);
}

struct Options {
  std::string config;
  std::string snapshot;
  std::string model;
  std::string scenario;
  std::string payoffs;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string method;
  std::vector<std::string> inputs;
};

RunConfig load_config(const Options& o) {
  RunConfig c = o.config.empty() ? run_config_from_json(Json::object()) : run_config_from_json(load_json(o.config));
  if (o.threads > 0) c.threads = o.threads;
  if (o.seed) c.seed = o.seed;
  if (c.threads > 0) set_threads(c.threads);
  return c;
}

std::string out_or(const Options& o, const RunConfig& c, const std::string& fallback) {
  if (!o.out.empty()) return o.out;
  if (!c.out.empty()) return c.out;
  return fallback;
}

void write_json(const fs::path& path, const Json& j) { atomic_write(path, j.dump(2) + "\n"); }

std::string residuals_csv(const Coupling& mu) {
  const auto rm = martingale_residual(mu);
  const auto rc = consistency_residual(mu);
  const GridSpec& g = mu.grid;
  CsvWriter w({"i", "j", "s1", "v", "r_m", "r_c"});
  for (std::size_t i = 0; i < g.n1(); ++i)
    for (std::size_t j = 0; j < g.nv(); ++j) {
      const std::size_t n = i * g.nv() + j;
      w.cell(i).cell(j).cell(g.s1[i]).cell(g.v[j]).cell(rm[n]).cell(rc[n]);
      w.end_row();
    }
  return w.str();
}

std::string marginals_csv(const Coupling& mu, const Targets& targets) {
  const Marginals m = marginals(mu, Exec::serial);
  CsvWriter w({"axis", "index", "grid", "target", "model", "abs_error"});
  auto add = [&](const char* axis, const MarginalLaw& model, const MarginalLaw& target) {
    for (std::size_t x = 0; x < model.size(); ++x) {
      w.cell(std::string(axis)).cell(x).cell(model.grid[x]).cell(target.weights[x]).cell(model.weights[x]);
      w.cell(std::abs(model.weights[x] - target.weights[x]));
      w.end_row();
    }
  };
  add("s1", m.s1, targets.s1);
  add("v", m.v, targets.v);
  add("s2", m.s2, targets.s2);
  return w.str();
}

std::string trace_csv(const CalibDiagnostics& d) {
  CsvWriter w({"iteration", "marg_err_s1", "marg_err_v", "marg_err_s2", "max_abs_rm", "max_abs_rc"});
  for (const auto& r : d.trace) {
    w.cell(r.iteration).cell(r.marg_err_s1).cell(r.marg_err_v).cell(r.marg_err_s2).cell(r.max_abs_rm);
    w.cell(r.max_abs_rc);
    w.end_row();
  }
  return w.str();
}

std::string smile_fit_csv(const Coupling& mu, const MarketSnapshot& snap) {
  CsvWriter w({"instrument", "strike", "type", "market", "model", "error_rel_forward"});
  for (const auto& r : smile_fit(mu, snap)) {
    w.cell(r.instrument).cell(r.strike).cell(r.type).cell(r.market).cell(r.model).cell(r.error);
    w.end_row();
  }
  return w.str();
}

fs::path sibling(const fs::path& model_path, const std::string& suffix) {
  fs::path p = model_path;
  std::string stem = p.stem().string();
  if (stem.size() > 4 && stem.ends_with(".bin")) stem.resize(stem.size() - 4);
  return p.replace_filename(stem + suffix);
}

int cmd_synth(const Options& o) {
  const RunConfig c = load_config(o);
  const fs::path out = out_or(o, c, "snapshot.json");
  write_json(out, snapshot_to_json(synthetic_snapshot(c.market)));
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_calibrate(const Options& o) {
  const RunConfig c = load_config(o);
  if (o.snapshot.empty()) throw InputError("calibrate needs --snapshot");
  const MarketSnapshot snap = snapshot_from_json(load_json(o.snapshot));
  const fs::path out = out_or(o, c, "model.json");
  CalibratedModel model;
  try {
    model = calibrate(snap, c.grid, c.calib);
  } catch (const CalibrationError& e) {
    std::cerr << "calibration failed: " << e.what() << "\n" << e.diagnostics() << "\n";
    throw;
  }
  spdlog::info("calibrated in {:.3f} s: {}", model.diagnostics.wall_seconds, model.diagnostics.summary());
  write_json(out, model_to_json(model));
  atomic_write(sibling(out, ".residuals.csv"), residuals_csv(model.coupling()));
  atomic_write(sibling(out, ".marginals.csv"), marginals_csv(model.coupling(), model.targets));
  atomic_write(sibling(out, ".trace.csv"), trace_csv(model.diagnostics));
  atomic_write(sibling(out, ".smile_fit.csv"), smile_fit_csv(model.coupling(), snap));
  std::cout << model.diagnostics.summary() << "\n";
  return 0;
}

int cmd_diagnose(const Options& o) {
  const RunConfig c = load_config(o);
  if (o.model.empty()) throw InputError("diagnose needs --model");
  CalibratedModel model = model_from_json(load_json(o.model));
  const fs::path dir = out_or(o, c, ".");
  const Coupling& mu = model.coupling();
  const auto rm = martingale_residual(mu);
  const auto rc = consistency_residual(mu);
  auto absmax = [](const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    return m;
  };
  const Marginals m = marginals(mu, Exec::serial);
  Json summary{{"max_abs_rm", absmax(rm)},
               {"max_abs_rc", absmax(rc)},
               {"marg_err_s1", l1_distance(m.s1.weights, model.targets.s1.weights)},
               {"marg_err_v", l1_distance(m.v.weights, model.targets.v.weights)},
               {"marg_err_s2", l1_distance(m.s2.weights, model.targets.s2.weights)},
               {"grid", {{"n1", model.grid.n1()}, {"nv", model.grid.nv()}, {"n2", model.grid.n2()}}}};
  try {
    attach_fisher(model, c.fisher_lambda);
    const FisherSystem& f = fisher_of(model);
    summary["fisher"] = {{"dim", f.dim()}, {"lambda", f.lambda()}, {"trace", f.trace()}, {"cholesky", true}};
  } catch (const ConditioningError& e) {
    summary["fisher"] = {{"cholesky", false}, {"error", e.what()}};
  }
  atomic_write(dir / "residuals.csv", residuals_csv(mu));
  atomic_write(dir / "marginals.csv", marginals_csv(mu, model.targets));
  atomic_write(dir / "coupling.csv", coupling_csv(mu));
  if (model.snapshot) atomic_write(dir / "smile_fit.csv", smile_fit_csv(mu, *model.snapshot));
  write_json(dir / "diagnose.json", summary);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_risk(const Options& o) {
  const RunConfig c = load_config(o);
  const RiskMethod method = risk_method_from_string(o.method);
  if (o.model.empty()) throw InputError("risk needs --model");
  CalibratedModel model = model_from_json(load_json(o.model));
  model.config.exec = c.calib.exec;
  const std::vector<BumpSpec> scenarios = o.scenario.empty() ? c.scenarios : scenarios_from_json(load_json(o.scenario));
  const std::vector<PayoffSpec> payoffs = o.payoffs.empty() ? c.payoffs : payoffs_from_json(load_json(o.payoffs));
  if (scenarios.empty()) throw InputError("no scenarios given (--scenario or $.scenarios)");
  if (payoffs.empty()) throw InputError("no payoffs given (--payoffs or $.payoffs)");
  const fs::path out = out_or(o, c, "risk.csv");
  RiskTiming timing;
  const auto rows = compute_risk(model, scenarios, payoffs, method, c.fisher_lambda, &timing);
  atomic_write(out, risk_csv(rows));
  std::cout << to_string(method) << ": " << rows.size() << " rows, method time " << timing.method_ms << " ms\n";
  return 0;
}

int cmd_compare(const Options& o) {
  load_config(o);
  if (o.inputs.size() < 2) throw InputError("compare needs at least two risk CSVs");
  struct Entry {
    std::string method;
    double value;
  };
  std::vector<std::vector<std::pair<std::string, std::string>>> orders;
  std::vector<std::map<std::pair<std::string, std::string>, Entry>> tables;
  for (const auto& path : o.inputs) {
    const CsvTable t = parse_csv(read_file(path), path);
    const std::size_t cp = t.column("payoff"), cs = t.column("scenario"), cm = t.column("method"),
                      cv = t.column("sensitivity");
    std::map<std::pair<std::string, std::string>, Entry> m;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& r : t.rows) {
      double v = 0.0;
      try {
        v = std::stod(r[cv]);
      } catch (const std::exception&) {
        throw InputError(path + ": bad sensitivity value '" + r[cv] + "'");
      }
      const auto key = std::make_pair(r[cp], r[cs]);
      if (!m.emplace(key, Entry{r[cm], v}).second)
        throw InputError(path + ": duplicate row for " + key.first + "/" + key.second);
      order.push_back(key);
    }
    tables.push_back(std::move(m));
    orders.push_back(std::move(order));
  }
  CsvWriter w({"payoff", "scenario", "method_a", "value_a", "method_b", "value_b", "abs_gap", "rel_gap"});
  for (std::size_t f = 1; f < tables.size(); ++f) {
    if (tables[f].size() != tables[0].size())
      throw InputError("comparison error: " + o.inputs[f] + " covers a different payoff/scenario set");
    for (const auto& key : orders[0]) {
      const auto it = tables[f].find(key);
      if (it == tables[f].end())
        throw InputError("comparison error: " + o.inputs[f] + " lacks " + key.first + "/" + key.second);
      const Entry& a = tables[0].at(key);
      const Entry& b = it->second;
      const double gap = std::abs(b.value - a.value);
      const double scale = std::abs(a.value);
      w.cell(key.first).cell(key.second).cell(a.method).cell(a.value).cell(b.method).cell(b.value).cell(gap);
      w.cell(scale > 0.0 ? gap / scale : (gap == 0.0 ? 0.0 : INFINITY));
      w.end_row();
    }
  }
  const fs::path out = o.out.empty() ? fs::path("compare.csv") : fs::path(o.out);
  atomic_write(out, w.str());
  std::cout << "compared " << w.rows() << " rows\n";
  return 0;
}

int cmd_backtest(const Options& o) {
  RunConfig c = load_config(o);
  BacktestConfig& b = c.backtest;
  if (o.seed) b.seed = *o.seed;
  else if (c.seed) b.seed = *c.seed;
  const fs::path dir = out_or(o, c, "report");
  const MarketPath path = gen_market_path(b, b.seed);
  const std::vector<Portfolio> ports = gen_portfolios(path, b.n_portfolios, b.seed + 1);
  const HedgeReport pot = run_backtest(path, ports, HedgeMethod::pot, b);
  const HedgeReport bench = run_backtest(path, ports, HedgeMethod::benchmark, b);
  const ReportComparison cmp = compare_reports(pot, bench);

  CsvWriter sd({"portfolio", "pot_stdev", "benchmark_stdev", "ratio"});
  CsvWriter roll({"portfolio", "date", "pot_stdev", "benchmark_stdev"});
  CsvWriter pnl({"portfolio", "date", "pot_pnl", "benchmark_pnl"});
  for (std::size_t p = 0; p < ports.size(); ++p) {
    sd.cell(p).cell(pot.stdev[p]).cell(bench.stdev[p]).cell(cmp.stdev_ratio[p]);
    sd.end_row();
    for (std::size_t t = 0; t < pot.rolling[p].size(); ++t) {
      roll.cell(p).cell(pot.pnl_dates[t + static_cast<std::size_t>(b.window) - 1]);
      roll.cell(pot.rolling[p][t]).cell(bench.rolling[p][t]);
      roll.end_row();
    }
    for (std::size_t t = 0; t < pot.pnl[p].size(); ++t) {
      pnl.cell(p).cell(pot.pnl_dates[t]).cell(pot.pnl[p][t]).cell(bench.pnl[p][t]);
      pnl.end_row();
    }
  }
  Json skipped = Json::array();
  for (int d : pot.skipped_dates) skipped.push_back(d);
  const Json summary{{"n_portfolios", ports.size()},
                     {"pct_pot_wins", cmp.pct_a_wins / 100.0},
                     {"median_stdev_ratio", cmp.median_ratio},
                     {"days", b.days},
                     {"seed", b.seed},
                     {"skipped_dates", skipped}};
  atomic_write(dir / "stdev.csv", sd.str());
  atomic_write(dir / "rolling_stdev.csv", roll.str());
  atomic_write(dir / "daily_pnl.csv", pnl.str());
  write_json(dir / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  setup_logging();
  CLI::App app{"Perturbed optimal transport: joint SPX/VIX calibration and risk"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "Run configuration JSON");
  app.add_option("--threads", o.threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", o.seed, "Random seed");

  auto* synth = app.add_subcommand("synth", "Write the synthetic market snapshot described by the config");
  synth->add_option("--out", o.out, "Snapshot path");

  auto* calib = app.add_subcommand("calibrate", "Calibrate a coupling to a snapshot");
  calib->add_option("--snapshot", o.snapshot, "Market snapshot JSON")->required();
  calib->add_option("--out", o.out, "Model path; diagnostics CSVs are written next to it");

  auto* diag = app.add_subcommand("diagnose", "Residual fields, marginal errors, smile fit and Fisher check");
  diag->add_option("--model", o.model, "Model JSON")->required();
  diag->add_option("--out", o.out, "Output directory");

  auto* risk = app.add_subcommand("risk", "Sensitivities by linear response, dimensional reduction or recalibration");
  risk->add_option("method", o.method, "lr, dr or recalib")->required()->check(CLI::IsMember({"lr", "dr", "recalib"}));
  risk->add_option("--model", o.model, "Model JSON")->required();
  risk->add_option("--scenario", o.scenario, "Scenario JSON");
  risk->add_option("--payoffs", o.payoffs, "Payoff JSON");
  risk->add_option("--out", o.out, "Risk CSV path");

  auto* compare = app.add_subcommand("compare", "Side-by-side comparison of risk CSVs against the first one");
  compare->add_option("inputs", o.inputs, "Risk CSVs")->required()->expected(2, -1);
  compare->add_option("--out", o.out, "Comparison CSV path");

  auto* bt = app.add_subcommand("backtest", "Hedging backtest on a synthetic SSR market path");
  bt->add_option("--out", o.out, "Report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*calib) return cmd_calibrate(o);
    if (*diag) return cmd_diagnose(o);
    if (*risk) return cmd_risk(o);
    if (*compare) return cmd_compare(o);
    if (*bt) return cmd_backtest(o);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("pot");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace pot
