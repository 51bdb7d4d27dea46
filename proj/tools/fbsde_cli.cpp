#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fbsde/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Forward-backward utility maximization solver"};
  app.set_version_flag("--version", std::string(FBSDE_VERSION));
  app.require_subcommand(1);

  std::string scenario, out_dir;
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "Execute the tasks of a scenario file");
  run->add_option("scenario", scenario, "Scenario JSON")->required();
  run->add_option("--out", out_dir, "Output directory for report.json and tables/")->required();
  run->add_option("--override", overrides, "Dotted key=value assignment, applied in order");

  std::string report_a, report_b, keys;
  auto* cmp = app.add_subcommand("compare", "Tabulate differences between two reports");
  cmp->add_option("a", report_a, "First report")->required();
  cmp->add_option("b", report_b, "Second report")->required();
  cmp->add_option("--keys", keys, "Comma-separated dotted keys")->required();

  app.add_subcommand("selftest", "Run the fixture-free smoke suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? fbsde::kExitOk : fbsde::kExitError;
  }

  if (run->parsed()) return fbsde::run_scenario(scenario, out_dir, overrides, std::cout, std::cerr);
  if (cmp->parsed()) {
    std::vector<std::string> list;
    std::stringstream ss(keys);
    for (std::string k; std::getline(ss, k, ',');)
      if (!k.empty()) list.push_back(k);
    return fbsde::compare_files(report_a, report_b, list, std::cout, std::cerr);
  }
  return fbsde::selftest(std::cout);
}
