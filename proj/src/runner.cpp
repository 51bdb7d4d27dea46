#include "fbsde/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "fbsde/closed_form.hpp"
#include "fbsde/error.hpp"
#include "fbsde/parallel.hpp"
#include "fbsde/verification.hpp"

#ifndef FBSDE_VERSION
#define FBSDE_VERSION "0.0.0"
#endif

namespace fbsde {

namespace fs = std::filesystem;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json solution_summary(const FBSDESolution& s) {
  json pi0 = json::array();
  for (int k = 0; k < s.pi_star.dim(); ++k) pi0.push_back(mean_stat(s.pi_star.slice(0, k), s.pi_star.n_paths()).mean);
  return json{{"x0", s.x0},
              {"y0", s.y0},
              {"y0_se", s.y0_se},
              {"utility", s.x0 + s.y0},
              {"utility_se", s.y0_se},
              {"pi0_mean", pi0},
              {"iterations", s.iterations},
              {"converged", s.converged},
              {"status", s.status},
              {"optimizer_residual", s.optimizer_residual},
              {"forward_residual", s.forward_residual},
              {"terminal_residual_rms", s.terminal_residual_rms},
              {"touching_residual", s.touching_residual},
              {"y0_history", s.y0_history},
              {"path_change_history", s.path_change_history}};
}

void write_solution_tables(const fs::path& dir, const std::string& prefix, const FBSDESolution& s,
                           const TimeGrid& grid) {
  auto put = [&](const std::string& name, const ProcessPath& p) {
    if (p.empty()) return;
    for (int k = 0; k < p.dim(); ++k) {
      const std::string suffix = p.dim() > 1 || name == "Z" || name == "V" || name == "pi" ? "_" + std::to_string(k) : "";
      write_process_csv((dir / (prefix + name + suffix + ".csv")).string(), p, k, grid);
    }
  };
  put("X", s.X);
  put("Y", s.Y);
  put("Z", s.Z);
  put("U", s.U);
  put("V", s.V);
  put("pi", s.pi_star);
}

void write_series_csv(const fs::path& path, const TimeGrid& grid, const std::vector<double>& v) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::configuration_error, "cannot write " + path.string());
  f << "t,mean,stderr,q05,q95\n";
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string x = fmt17(v[i]);
    f << fmt17(grid.t(static_cast<int>(i))) << ',' << x << ",0," << x << ',' << x << '\n';
  }
}

bool later_task(const std::vector<Task>& tasks, std::size_t from, Task t) {
  return std::find(tasks.begin() + static_cast<std::ptrdiff_t>(from), tasks.end(), t) != tasks.end();
}

constexpr char kMagic[8] = {'F', 'B', 'S', 'D', 'E', 'S', 'O', 'L'};
constexpr std::uint32_t kCacheVersion = 1;

template <class T>
void put_raw(std::ostream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get_raw(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw Error(ErrorCode::configuration_error, "solution cache truncated: " + path);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------

void write_process_csv(const std::string& path, const ProcessPath& p, int component, const TimeGrid& grid) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::configuration_error, "cannot write " + path);
  f << "t,mean,stderr,q05,q95\n";
  const std::size_t np = p.n_paths();
  std::vector<double> v(np);
  auto quantile = [&](double q) {
    // Linear interpolation between order statistics.
    const double pos = q * static_cast<double>(np - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    const double a = v[lo];
    if (lo + 1 >= np) return a;
    const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return a + (pos - static_cast<double>(lo)) * (b - a);
  };
  for (int i = 0; i < p.length(); ++i) {
    const double* s = p.slice(i, component);
    std::copy_n(s, np, v.begin());
    const MeanStat m = mean_stat(s, np);
    const double q05 = quantile(0.05);
    const double q95 = quantile(0.95);
    f << fmt17(grid.t(i)) << ',' << fmt17(m.mean) << ',' << fmt17(m.se) << ',' << fmt17(q05) << ',' << fmt17(q95)
      << '\n';
  }
}

CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::configuration_error, "cannot read " + path);
  CsvTable t;
  std::string line;
  if (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.header.push_back(cell);
  }
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------

void save_solution(const std::string& path, const FBSDESolution& sol, const PathEnsemble& paths, std::uint64_t seed) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw Error(ErrorCode::configuration_error, "cannot write solution cache " + path);
  o.write(kMagic, sizeof kMagic);
  put_raw(o, kCacheVersion);
  put_raw(o, static_cast<std::uint64_t>(paths.n_paths()));
  put_raw(o, static_cast<std::int32_t>(paths.n_steps()));
  put_raw(o, static_cast<std::int32_t>(paths.d()));
  put_raw(o, static_cast<std::int32_t>(paths.n()));
  put_raw(o, seed);
  put_raw(o, sol.x0);
  put_raw(o, static_cast<std::int32_t>(sol.iterations));
  put_raw(o, static_cast<std::int32_t>(sol.converged ? 1 : 0));
  for (const ProcessPath* p : {&sol.X, &sol.Y, &sol.Z, &sol.U, &sol.V, &sol.pi_star}) {
    put_raw(o, static_cast<std::uint64_t>(p->data().size()));
    o.write(reinterpret_cast<const char*>(p->data().data()),
            static_cast<std::streamsize>(p->data().size() * sizeof(double)));
  }
  if (!o) throw Error(ErrorCode::configuration_error, "failed writing solution cache " + path);
}

FBSDESolution load_solution(const std::string& path, const PathEnsemble& paths, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::configuration_error, "cannot read solution cache " + path);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0 ||
      get_raw<std::uint32_t>(in, path) != kCacheVersion)
    throw Error(ErrorCode::configuration_error, "not a solution cache: " + path);
  const auto np = get_raw<std::uint64_t>(in, path);
  const auto N = get_raw<std::int32_t>(in, path);
  const auto d = get_raw<std::int32_t>(in, path);
  const auto n = get_raw<std::int32_t>(in, path);
  const auto s = get_raw<std::uint64_t>(in, path);
  if (np != paths.n_paths() || N != paths.n_steps() || d != paths.d() || n != paths.n() || s != seed)
    throw Error(ErrorCode::configuration_error, "solution cache does not match the scenario: " + path);
  FBSDESolution sol;
  sol.x0 = get_raw<double>(in, path);
  sol.iterations = get_raw<std::int32_t>(in, path);
  sol.converged = get_raw<std::int32_t>(in, path) != 0;
  sol.status = "cached";
  sol.X = ProcessPath(np, N, 1, Timing::adapted);
  sol.Y = ProcessPath(np, N, 1, Timing::adapted);
  sol.Z = ProcessPath(np, N, d, Timing::predictable);
  sol.U = ProcessPath(np, N, 1, Timing::adapted);
  sol.V = ProcessPath(np, N, d, Timing::predictable);
  sol.pi_star = ProcessPath(np, N, n, Timing::predictable);
  for (ProcessPath* p : {&sol.X, &sol.Y, &sol.Z, &sol.U, &sol.V, &sol.pi_star}) {
    if (get_raw<std::uint64_t>(in, path) != p->data().size())
      throw Error(ErrorCode::configuration_error, "solution cache has a malformed block: " + path);
    if (!in.read(reinterpret_cast<char*>(p->data().data()),
                 static_cast<std::streamsize>(p->data().size() * sizeof(double))))
      throw Error(ErrorCode::configuration_error, "solution cache truncated: " + path);
  }
  sol.y0 = mean_stat(sol.Y.slice(0), np).mean;
  return sol;
}

// ---------------------------------------------------------------------------

RunOutcome run_tasks(const Scenario& sc, const std::string& out_dir, std::ostream& log) {
  using clock = std::chrono::steady_clock;
  const fs::path out(out_dir), tables = fs::path(out_dir) / "tables";
  fs::create_directories(tables);

  RunOutcome res;
  json& rep = res.report;
  rep["schema_version"] = kReportSchemaVersion;
  rep["version"] = FBSDE_VERSION;
  rep["seed"] = sc.numerics.seed;
  rep["scenario"] = sc.to_json();
  rep["results"] = json::object();
  rep["timings"] = json::object();

  std::optional<Problem> problem;
  std::optional<FBSDESolution> held;
  const auto start = clock::now();

  for (std::size_t ti = 0; ti < sc.tasks.size(); ++ti) {
    const Task task = sc.tasks[ti];
    const std::string name = to_string(task);
    const auto t0 = clock::now();
    log << "task " << name << '\n';
    const bool keep = later_task(sc.tasks, ti + 1, Task::verify) && !later_task(sc.tasks, ti + 1, Task::numeric_solve);
    json r;

    if (task == Task::closed_form) {
      const std::string kind = sc.generator.kind;
      auto take = [&](Problem&& pb, FBSDESolution&& sol) {
        write_solution_tables(tables, "closed_form_", sol, pb.paths.grid());
        r["solution"] = solution_summary(sol);
        if (keep) {
          held = std::move(sol);
          problem = std::move(pb);
        }
      };
      if (kind == "quadratic_discount" && sc.market.n == sc.market.d) {
        CompleteQuadratic c = solve_complete_quadratic(sc);
        r["model"] = "complete_quadratic";
        r["C"] = c.C;
        r["C_mc"] = c.C_mc;
        r["C_mc_se"] = c.C_mc_se;
        r["utility"] = c.utility;
        r["budget_mean"] = c.budget_mean;
        r["budget_mean_se"] = c.budget_se;
        r["representation_rms"] = c.representation_rms;
        take(std::move(c.problem), std::move(c.solution));
      } else if (kind == "quadratic_discount") {
        IncompleteQuadratic c = solve_incomplete_quadratic(sc);
        r["model"] = "incomplete_quadratic";
        r["utility"] = c.utility;
        r["utility_se"] = c.utility_se;
        r["penalty"] = c.penalty;
        r["penalty_se"] = c.penalty_se;
        r["complete_value"] = c.complete_value;
        r["complete_value_se"] = c.complete_value_se;
        r["representation_rms"] = c.representation_rms;
        r["residual_terminal_discount"] = c.residual_terminal_discount;
        r["residual_running_discount"] = c.residual_running_discount;
        take(std::move(c.problem), std::move(c.solution));
      } else if (kind == "recursive_kp") {
        RecursiveUtility c = solve_recursive_utility(sc);
        r["model"] = "recursive_utility";
        r["phi0"] = c.phi.front();
        r["utility"] = c.phi.front();
        r["representation_rms"] = c.representation_rms;
        r["representation_max"] = c.representation_max;
        r["consistency_max"] = c.consistency_max;
        write_series_csv(tables / "closed_form_phi.csv", c.problem.paths.grid(), c.phi);
        take(std::move(c.problem), std::move(c.solution));
      } else if (kind == "exp_quadratic") {
        ExponentialExample c = solve_exponential_example(sc);
        r["model"] = "exponential_example";
        r["y_hat0"] = c.y_hat0;
        r["z_hat2_rms"] = c.z_hat2_rms;
        r["z_hat2_max"] = c.z_hat2_max;
        r["representation_rms"] = c.representation_rms;
        r["residual_y_rms"] = c.residual_y_rms;
        r["residual_u_rms"] = c.residual_u_rms;
        r["residual_rms"] = c.residual_rms;
        r["residual_threshold"] = c.threshold;
        take(std::move(c.problem), std::move(c.solution));
      } else {
        throw Error(ErrorCode::unsupported, "no closed form for generator kind " + kind);
      }
    } else if (task == Task::numeric_solve) {
      held.reset();
      if (!problem || problem->dynamics != Dynamics::market) problem = make_problem(sc, Dynamics::market);
      FBSDESolution sol = picard_solve(problem->g, problem->terminal, problem->paths, problem->x0,
                                       solver_options(sc.numerics), problem->features());
      r["solution"] = solution_summary(sol);
      write_solution_tables(tables, "numeric_solve_", sol, problem->paths.grid());
      if (!sc.numerics.solution_cache.empty()) {
        save_solution(sc.numerics.solution_cache, sol, problem->paths, sc.numerics.seed);
        r["cache_written"] = true;
      }
      if (keep) held = std::move(sol);
    } else if (task == Task::verify) {
      if (!problem) problem = make_problem(sc, Dynamics::market);
      std::string source = "held";
      if (!held) {
        if (!sc.numerics.solution_cache.empty() && fs::exists(sc.numerics.solution_cache)) {
          held = load_solution(sc.numerics.solution_cache, problem->paths, sc.numerics.seed);
          source = "cache";
        } else {
          held = picard_solve(problem->g, problem->terminal, problem->paths, problem->x0,
                              solver_options(sc.numerics), problem->features());
          source = "numeric_solve";
        }
      }
      const VerificationReport vr = verify_solution(*problem, std::move(*held), verify_options(sc.numerics));
      held.reset();
      json v = vr.to_json();
      v["source"] = source;
      v["caveat"] = "the martingale property of int Z dW is checked through zero conditional drift, which is "
                    "necessary but not sufficient";
      rep["verification"] = v;
      r["verdict"] = vr.verdict;
      for (const Check& c : vr.checks) log << "  " << (c.pass ? "pass " : "FAIL ") << c.name << '\n';
      if (!vr.verdict) res.exit_code = kExitVerificationFailed;
    } else if (task == Task::price) {
      const PriceReport p = indifference_prices(sc);
      r = json{{"discount_T", p.discount_T},
               {"utility_claim", p.utility_claim},
               {"utility_claim_se", p.utility_claim_se},
               {"complete_value", p.complete_value},
               {"complete_value_se", p.complete_value_se},
               {"incomplete_value", p.incomplete_value},
               {"incomplete_value_se", p.incomplete_value_se},
               {"penalty", p.penalty},
               {"penalty_se", p.penalty_se},
               {"x_star", p.x_star},
               {"x_star_se", p.x_star_se},
               {"y_star", p.y_star},
               {"y_star_se", p.y_star_se},
               {"cost", p.cost},
               {"cost_se", p.cost_se},
               {"cost_se_paired", p.cost_se_paired}};
    }

    std::string key = name;
    for (int k = 2; rep["results"].contains(key); ++k) key = name + "_" + std::to_string(k);
    rep["results"][key] = r;
    rep["timings"][key] = std::chrono::duration<double>(clock::now() - t0).count();
  }
  rep["timings"]["total"] = std::chrono::duration<double>(clock::now() - start).count();

  std::ofstream f(out / "report.json");
  if (!f) throw Error(ErrorCode::configuration_error, "cannot write " + (out / "report.json").string());
  f << rep.dump(2) << '\n';
  return res;
}

int run_scenario(const std::string& scenario_path, const std::string& out_dir,
                 const std::vector<std::string>& overrides, std::ostream& log, std::ostream& err) {
  try {
    const Scenario sc = load_scenario(scenario_path, overrides);
    const RunOutcome r = run_tasks(sc, out_dir, log);
    if (r.exit_code == kExitVerificationFailed) err << "verification failed\n";
    return r.exit_code;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
  }
  return kExitError;
}

std::string report_payload(const json& report) {
  json r = report;
  r.erase("timings");
  return r.dump();
}

// ---------------------------------------------------------------------------

namespace {

void collect_keys(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      collect_keys(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) collect_keys(j[i], prefix + "." + std::to_string(i), out);
  } else if (j.is_number()) {
    out.push_back(prefix);
  }
}

const json* lookup(const json& j, const std::string& key) {
  const json* cur = &j;
  std::stringstream ss(key);
  std::string seg;
  while (std::getline(ss, seg, '.')) {
    if (cur->is_object()) {
      auto it = cur->find(seg);
      if (it == cur->end()) return nullptr;
      cur = &*it;
    } else if (cur->is_array()) {
      char* end = nullptr;
      const unsigned long idx = std::strtoul(seg.c_str(), &end, 10);
      if (seg.empty() || *end != '\0' || idx >= cur->size()) return nullptr;
      cur = &(*cur)[idx];
    } else {
      return nullptr;
    }
  }
  return cur;
}

double se_of(const json& report, const std::string& key) {
  const json* s = lookup(report, key + "_se");
  return s && s->is_number() ? s->get<double>() : -1.0;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s;
}

}  // namespace

std::vector<std::string> numeric_keys(const json& report) {
  std::vector<std::string> out;
  collect_keys(report, "", out);
  return out;
}

Comparison compare_reports(const json& a, const json& b, const std::vector<std::string>& keys) {
  Comparison c;
  if (a.value("schema_version", -1) != b.value("schema_version", -1))
    c.warnings.push_back("reports have different schema versions");
  if (a.contains("scenario") && b.contains("scenario") && a["scenario"] != b["scenario"])
    c.warnings.push_back("reports come from different scenarios");
  for (const std::string& key : keys) {
    const json* va = lookup(a, key);
    const json* vb = lookup(b, key);
    for (const auto& [v, doc, label] : {std::tuple{va, &a, "first"}, std::tuple{vb, &b, "second"}})
      if (!v || !v->is_number())
        throw Error(ErrorCode::key_error, "key '" + key + "' missing from the " + label +
                                              " report; available: " + join(numeric_keys(*doc)));
    CompareRow row;
    row.key = key;
    row.a = va->get<double>();
    row.b = vb->get<double>();
    row.diff = row.b - row.a;
    const double sa = se_of(a, key), sb = se_of(b, key);
    if (sa >= 0.0 || sb >= 0.0) row.se = std::hypot(std::max(sa, 0.0), std::max(sb, 0.0));
    c.rows.push_back(row);
  }
  return c;
}

int compare_files(const std::string& a, const std::string& b, const std::vector<std::string>& keys, std::ostream& out,
                  std::ostream& err) {
  try {
    auto read = [](const std::string& p) {
      std::ifstream f(p);
      if (!f) throw Error(ErrorCode::configuration_error, "cannot read " + p);
      std::stringstream ss;
      ss << f.rdbuf();
      return parse_json_text(ss.str());
    };
    const Comparison c = compare_reports(read(a), read(b), keys);
    for (const auto& w : c.warnings) err << "warning: " << w << '\n';
    char line[512];
    std::snprintf(line, sizeof line, "%-44s %22s %22s %22s %12s %9s\n", "key", "a", "b", "b-a", "se", "z");
    out << line;
    for (const CompareRow& r : c.rows) {
      char se[32] = "-", z[32] = "-";
      if (r.se >= 0.0) {
        std::snprintf(se, sizeof se, "%.4g", r.se);
        if (r.se > 0.0) std::snprintf(z, sizeof z, "%.2f", r.diff / r.se);
      }
      std::snprintf(line, sizeof line, "%-44s %22.15g %22.15g %22.15g %12s %9s\n", r.key.c_str(), r.a, r.b, r.diff,
                    se, z);
      out << line;
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace fbsde
