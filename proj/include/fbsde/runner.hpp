#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "fbsde/scenario.hpp"
#include "fbsde/solver.hpp"

namespace fbsde {

inline constexpr int kReportSchemaVersion = 1;

// Exit codes of the runner and the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitVerificationFailed = 2;

// Executes the scenario tasks in order and writes out_dir/report.json and
// out_dir/tables/*.csv. Errors are reported on err and mapped to exit code 1.
int run_scenario(const std::string& scenario_path, const std::string& out_dir,
                 const std::vector<std::string>& overrides, std::ostream& log, std::ostream& err);

// Same, on an already parsed scenario; returns the report.
struct RunOutcome {
  json report;
  int exit_code = kExitOk;
};
RunOutcome run_tasks(const Scenario& sc, const std::string& out_dir, std::ostream& log);

// The report without its timings block, serialized; equal across reruns.
std::string report_payload(const json& report);

// Binary solution cache: shape header plus X, Y, Z, U, V and pi*.
void save_solution(const std::string& path, const FBSDESolution& sol, const PathEnsemble& paths, std::uint64_t seed);
FBSDESolution load_solution(const std::string& path, const PathEnsemble& paths, std::uint64_t seed);

// Per-node summary of one component: t, mean, stderr, q05, q95 at 17
// significant digits.
void write_process_csv(const std::string& path, const ProcessPath& p, int component, const TimeGrid& grid);
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
CsvTable read_csv(const std::string& path);

struct CompareRow {
  std::string key;
  double a = 0.0;
  double b = 0.0;
  double diff = 0.0;  // b - a
  double se = -1.0;   // combined SE from *_se siblings, -1 when neither report has one
};
struct Comparison {
  std::vector<CompareRow> rows;
  std::vector<std::string> warnings;
};
// Keys are dotted paths to numeric leaves; a missing key throws key-error
// listing the available ones.
Comparison compare_reports(const json& a, const json& b, const std::vector<std::string>& keys);
std::vector<std::string> numeric_keys(const json& report);
int compare_files(const std::string& a, const std::string& b, const std::vector<std::string>& keys, std::ostream& out,
                  std::ostream& err);

// Fixture-free smoke suite; one line per example, returns the exit code.
int selftest(std::ostream& out);

}  // namespace fbsde
