#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pot/backtest.hpp"
#include "pot/calibration.hpp"
#include "pot/grids_coupling.hpp"
#include "pot/market_model.hpp"
#include "pot/payoffs.hpp"
#include "pot/perturbations.hpp"
#include "pot/synthetic.hpp"

namespace pot {

using Json = nlohmann::json;

// Reads a file; InputError when it is missing or unreadable.
std::string read_file(const std::filesystem::path& path);
// Parses JSON; InputError carrying the source name and byte offset on malformed input.
Json parse_json(std::string_view text, const std::string& source);
Json load_json(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over the target.
void atomic_write(const std::filesystem::path& path, std::string_view content);

// Shortest round-trip decimal form.
std::string format_double(double x);

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  CsvWriter& cell(const std::string& s);
  CsvWriter& cell(double x);
  CsvWriter& cell(long x);
  CsvWriter& cell(int x) { return cell(static_cast<long>(x)); }
  CsvWriter& cell(std::size_t x) { return cell(static_cast<long>(x)); }
  // Ends the current row; InputError when the cell count differs from the header.
  void end_row();
  std::size_t rows() const { return rows_; }
  const std::string& str() const { return text_; }

 private:
  std::size_t columns_;
  std::size_t pending_ = 0;
  std::size_t rows_ = 0;
  std::string text_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; InputError when missing.
  std::size_t column(const std::string& name) const;
};

// Plain comma-separated parser (no quoting); the first line is the header.
CsvTable parse_csv(std::string_view text, const std::string& source);

// Schema-checked conversions. Errors name the offending field as a JSON path, e.g. $.grid.n1.
MarketSnapshot snapshot_from_json(const Json& j, const std::string& path = "$");
Json snapshot_to_json(const MarketSnapshot& s);

BumpSpec scenario_from_json(const Json& j, const std::string& path = "$");
Json scenario_to_json(const BumpSpec& spec);
// A single scenario object, an array, or {"scenarios": [...]}.
std::vector<BumpSpec> scenarios_from_json(const Json& j, const std::string& path = "$");

PayoffSpec payoff_from_json(const Json& j, const std::string& path = "$");
Json payoff_to_json(const PayoffSpec& p);
// An array or {"payoffs": [...]}.
std::vector<PayoffSpec> payoffs_from_json(const Json& j, const std::string& path = "$");

struct RunConfig {
  GridConfig grid;
  CalibConfig calib;
  double fisher_lambda = 0.0;
  SsrParams ssr;
  std::vector<BumpSpec> scenarios;
  std::vector<PayoffSpec> payoffs;
  SyntheticMarketConfig market;
  // Inherits grid, calibration, ssr and market from the top level.
  BacktestConfig backtest;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

RunConfig run_config_from_json(const Json& j);
Json run_config_to_json(const RunConfig& c);

// Model file: grids, prior marginals, targets, dual state, config, convergence diagnostics and the snapshot.
// Wall time and the iteration trace are left out so reruns produce identical bytes.
Json model_to_json(const CalibratedModel& model);
// Rebuilds the prior and the coupling cache from the stored state.
CalibratedModel model_from_json(const Json& j);

// Long format (i, j, k, mass).
std::string coupling_csv(const Coupling& mu);

}  // namespace pot
