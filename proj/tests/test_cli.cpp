#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fbsde/engine.hpp"
#include "fbsde/parallel.hpp"
#include "fbsde/runner.hpp"

using namespace fbsde;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path d = [] {
    fs::path p = fs::temp_directory_path() / ("fbsde_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

std::string scenario(const std::string& name) { return std::string(FBSDE_SCENARIO_DIR) + "/" + name; }

// Runs the CLI with stdout/stderr captured; returns the exit status.
int cli(const std::string& args, std::string* err = nullptr, const std::string& env = "") {
  const fs::path out = work_dir() / "stdout.txt", e = work_dir() / "stderr.txt";
  const std::string cmd = env + " \"" + std::string(FBSDE_CLI_PATH) + "\" " + args + " > \"" + out.string() +
                          "\" 2> \"" + e.string() + "\"";
  const int status = std::system(cmd.c_str());
  if (err) {
    std::ifstream f(e);
    std::stringstream ss;
    ss << f.rdbuf();
    *err = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_json_text(ss.str());
}

const std::string kSmall = " --override numerics.n_paths=4000 --override numerics.n_steps=40";

}  // namespace

TEST_CASE("baseline run writes the closed-form constant") {
  const fs::path out = work_dir() / "baseline";
  REQUIRE(cli("run " + scenario("baseline_complete.json") + " --out " + out.string() + kSmall) == 0);
  const json r = read_json(out / "report.json");
  CHECK(r["schema_version"] == kReportSchemaVersion);
  CHECK(r["results"]["closed_form"]["C"].get<double>() == doctest::Approx(1.37629).epsilon(1e-5));
  CHECK(r["verification"]["verdict"] == true);
  CHECK(r["scenario"]["numerics"]["n_paths"] == 4000);
  CHECK(fs::exists(out / "tables" / "numeric_solve_Y.csv"));

  const CsvTable t = read_csv((out / "tables" / "closed_form_X.csv").string());
  CHECK(t.header == std::vector<std::string>{"t", "mean", "stderr", "q05", "q95"});
  CHECK(t.rows.size() == 41);
  CHECK(t.rows.front()[1] == 1.0);
  CHECK(t.rows.front()[3] == 1.0);
}

TEST_CASE("CSV values round-trip bit-exactly") {
  const PathEnsemble p = simulate_brownian(make_uniform_grid(0.7, 9), 1, 1, 501, 3);
  ProcessPath w(501, 9, 1, Timing::adapted);
  for (int i = 0; i <= 9; ++i)
    for (std::size_t q = 0; q < 501; ++q) w(q, i) = std::exp(p.W(i, 0)[q]) / 3.0;
  const std::string path = (work_dir() / "w.csv").string();
  write_process_csv(path, w, 0, p.grid());
  const CsvTable t = read_csv(path);
  REQUIRE(t.rows.size() == 10);
  for (int i = 0; i <= 9; ++i) {
    const MeanStat m = mean_stat(w.slice(i), 501);
    CHECK(t.rows[static_cast<std::size_t>(i)][0] == p.grid().t(i));
    CHECK(t.rows[static_cast<std::size_t>(i)][1] == m.mean);
    CHECK(t.rows[static_cast<std::size_t>(i)][2] == m.se);
    CHECK(t.rows[static_cast<std::size_t>(i)][3] <= t.rows[static_cast<std::size_t>(i)][4]);
  }
  // Writing the parsed table again gives identical text.
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  std::ostringstream again;
  again << "t,mean,stderr,q05,q95\n";
  for (const auto& row : t.rows) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", row[k]);
      again << (k ? "," : "") << buf;
    }
    again << '\n';
  }
  CHECK(again.str() == ss.str());
}

TEST_CASE("reports are deterministic across runs and thread counts") {
  const std::string args = "run " + scenario("baseline_complete.json") + kSmall + " --override numerics.seed=1";
  REQUIRE(cli(args + " --out " + (work_dir() / "d1").string()) == 0);
  REQUIRE(cli(args + " --out " + (work_dir() / "d2").string()) == 0);
  REQUIRE(cli(args + " --out " + (work_dir() / "d3").string(), nullptr, "FBSDE_THREADS=1") == 0);
  const std::string a = report_payload(read_json(work_dir() / "d1" / "report.json"));
  CHECK(a == report_payload(read_json(work_dir() / "d2" / "report.json")));
  CHECK(a == report_payload(read_json(work_dir() / "d3" / "report.json")));
}

TEST_CASE("verification of a corrupted solution cache") {
  const fs::path cache = work_dir() / "solution.bin";
  const std::string base = "run " + scenario("baseline_complete.json") + kSmall +
                           " --override numerics.solution_cache=" + cache.string();
  REQUIRE(cli(base + " --override 'tasks=[\"numeric_solve\"]' --out " + (work_dir() / "c1").string()) == 0);
  REQUIRE(fs::exists(cache));
  CHECK(cli(base + " --override 'tasks=[\"verify\"]' --out " + (work_dir() / "c2").string()) == 0);
  CHECK(read_json(work_dir() / "c2" / "report.json")["verification"]["source"] == "cache");

  // Overwrite a block of strategy values near the end of the file.
  {
    std::fstream f(cache, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-8 * 1000, std::ios::end);
    const double junk = 3.0;
    for (int j = 0; j < 100; ++j) f.write(reinterpret_cast<const char*>(&junk), sizeof junk);
  }
  std::string err;
  CHECK(cli(base + " --override 'tasks=[\"verify\"]' --out " + (work_dir() / "c3").string(), &err) == 2);
  CHECK(err.find("verification failed") != std::string::npos);
  CHECK(read_json(work_dir() / "c3" / "report.json")["verification"]["verdict"] == false);

  // A truncated file is an error, not a verification failure.
  fs::resize_file(cache, 100);
  CHECK(cli(base + " --override 'tasks=[\"verify\"]' --out " + (work_dir() / "c4").string(), &err) == 1);
  CHECK(err.find("truncated") != std::string::npos);
}

TEST_CASE("configuration errors") {
  const fs::path bad = work_dir() / "bad.json";
  std::ofstream(bad) << "{\n  \"market\": {\"d\": 1,\n}\n";
  std::string err;
  CHECK(cli("run " + bad.string() + " --out " + (work_dir() / "e1").string(), &err) == 1);
  CHECK(err.find("line 3") != std::string::npos);

  CHECK(cli("run " + scenario("baseline_complete.json") + " --override generator.kind=cubic --out " +
                (work_dir() / "e2").string(),
            &err) == 1);
  CHECK(err.find("configuration-error") != std::string::npos);
  CHECK(cli("run " + (work_dir() / "missing.json").string() + " --out " + (work_dir() / "e3").string()) == 1);
}

TEST_CASE("compare") {
  const fs::path a = work_dir() / "baseline" / "report.json";
  if (!fs::exists(a))
    REQUIRE(cli("run " + scenario("baseline_complete.json") + " --out " + (work_dir() / "baseline").string() + kSmall) ==
            0);
  const json ra = read_json(a);
  const Comparison same = compare_reports(ra, ra, {"results.closed_form.C", "results.numeric_solve.solution.y0"});
  for (const CompareRow& r : same.rows) CHECK(r.diff == 0.0);
  CHECK(same.warnings.empty());
  CHECK(same.rows[1].se == doctest::Approx(std::sqrt(2.0) * ra["results"]["numeric_solve"]["solution"]["y0_se"].get<double>()));

  std::string err;
  CHECK(cli("compare " + a.string() + " " + a.string() + " --keys results.closed_form.C") == 0);
  CHECK(cli("compare " + a.string() + " " + a.string() + " --keys results.closed_form.nope", &err) == 1);
  CHECK(err.find("key-error") != std::string::npos);
  CHECK(err.find("results.closed_form.C") != std::string::npos);

  REQUIRE(cli("run " + scenario("baseline_complete.json") + kSmall + " --override numerics.seed=9 --out " +
              (work_dir() / "seed9").string()) == 0);
  CHECK(cli("compare " + a.string() + " " + (work_dir() / "seed9" / "report.json").string() +
                " --keys results.closed_form.C_mc",
            &err) == 0);
  CHECK(err.find("warning") != std::string::npos);
}

TEST_CASE("cost of incompleteness between a complete and an incomplete report") {
  const std::string n = " --override numerics.n_paths=20000";
  REQUIRE(cli("run " + scenario("complete_tanh.json") + n + " --out " + (work_dir() / "ct").string()) == 0);
  REQUIRE(cli("run " + scenario("incomplete_tanh.json") + n + " --override 'tasks=[\"closed_form\"]' --out " +
              (work_dir() / "it").string()) == 0);
  const json c = read_json(work_dir() / "ct" / "report.json"), i = read_json(work_dir() / "it" / "report.json");
  const Comparison cmp = compare_reports(c, i, {"results.closed_form.utility"});
  CHECK(cmp.warnings.size() == 1);
  const double penalty = i["results"]["closed_form"]["penalty"].get<double>();
  const double se = i["results"]["closed_form"]["penalty_se"].get<double>();
  const double complete_se = c["results"]["closed_form"]["C_mc_se"].get<double>();
  // beta = 0, so the discount factor is one.
  CHECK(std::abs(-cmp.rows[0].diff - penalty) <= 3.0 * std::hypot(se, complete_se) + 2e-3);
}

TEST_CASE("selftest subcommand") { CHECK(cli("selftest") == 0); }
