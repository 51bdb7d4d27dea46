#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbsde/core.hpp"

namespace fbsde {

using json = nlohmann::json;

struct GeneratorSpec {
  std::string kind = "quadratic_discount";
  double beta = 0.0;         // quadratic_discount, recursive_kp
  double gamma = 1.0;        // quadratic_discount
  double r = 0.5;            // power_ce
  double alpha = 1.0;        // recursive_kp
  double rho = 1.0;          // recursive_kp
  double consumption = 0.0;  // recursive_kp
};

struct Numerics {
  std::size_t n_paths = 100000;
  int n_steps = 200;
  std::uint64_t seed = 42;
  int basis_degree = 2;
  double ridge = 1e-10;
  int picard_max_iter = 60;
  double picard_damping = 0.5;
  double tol_y0 = 1e-6;
  double tol_path = 1e-5;
  std::string solution_cache;  // optional path for storing/loading the numeric solution
};

enum class Task { closed_form, numeric_solve, verify, price };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct Scenario {
  MarketModel market;
  GeneratorSpec generator;
  Claim claim;
  double initial_wealth = 0.0;
  Numerics numerics;
  std::vector<Task> tasks;

  // Echo with every default resolved.
  json to_json() const;
};

// Strict parse: unknown keys anywhere in the document are rejected with
// configuration-error.
Scenario scenario_from_json(const json& doc);

// Parses JSON text; syntax errors carry line and column.
json parse_json_text(const std::string& text);

// Reads, applies "a.b.c=value" overrides in order, and parses.
Scenario load_scenario(const std::string& path, const std::vector<std::string>& overrides = {});
json load_scenario_json(const std::string& path, const std::vector<std::string>& overrides = {});
void apply_override(json& doc, const std::string& assignment);

}  // namespace fbsde
