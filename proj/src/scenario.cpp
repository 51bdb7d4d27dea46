#include "fbsde/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace fbsde {

namespace {

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw Error(ErrorCode::configuration_error, where + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw Error(ErrorCode::configuration_error, "unknown key '" + it.key() + "' in " + where);
}

template <class T>
T get_or(const json& obj, const char* key, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::configuration_error, std::string("bad value for '") + key + "': " + e.what());
  }
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(ErrorCode::configuration_error, std::string("missing '") + key + "' in " + where);
  return *it;
}

MarketModel parse_market(const json& m) {
  check_keys(m, "market", {"d", "n", "horizon", "mu", "sigma", "s0", "mu_bound", "theta_complement"});
  const int n = get_or<int>(m, "n", 1);
  const int d = get_or<int>(m, "d", n);
  const double horizon = get_or<double>(m, "horizon", 1.0);
  auto mu = get_or<std::vector<double>>(m, "mu", std::vector<double>(static_cast<std::size_t>(std::max(n, 0)), 0.0));
  auto sigma = get_or<std::vector<std::vector<double>>>(m, "sigma", {});
  auto s0 = get_or<std::vector<double>>(m, "s0", {});
  const double bound = get_or<double>(m, "mu_bound", 0.0);
  auto tc = get_or<std::vector<double>>(m, "theta_complement", {});
  try {
    return make_market(d, n, horizon, std::move(mu), std::move(sigma), std::move(s0), bound, std::move(tc));
  } catch (const Error& e) {
    throw Error(ErrorCode::configuration_error, std::string("market: ") + e.what());
  }
}

GeneratorSpec parse_generator(const json& g) {
  check_keys(g, "generator", {"kind", "beta", "gamma", "r", "alpha", "rho", "consumption"});
  GeneratorSpec s;
  s.kind = get_or<std::string>(g, "kind", "");
  static const std::set<std::string> kinds{"quadratic_discount", "exponential_ce", "power_ce", "recursive_kp",
                                           "exp_quadratic"};
  if (!kinds.count(s.kind)) throw Error(ErrorCode::configuration_error, "unknown generator kind '" + s.kind + "'");
  s.beta = get_or<double>(g, "beta", s.beta);
  s.gamma = get_or<double>(g, "gamma", s.gamma);
  s.r = get_or<double>(g, "r", s.r);
  s.alpha = get_or<double>(g, "alpha", s.alpha);
  s.rho = get_or<double>(g, "rho", s.rho);
  s.consumption = get_or<double>(g, "consumption", s.consumption);
  return s;
}

Claim parse_claim(const json& c) {
  check_keys(c, "claim",
             {"kind", "value", "slope", "clip", "scale", "amplitude", "strike_low", "strike_high", "component"});
  Claim cl;
  cl.kind = claim_kind_from_string(get_or<std::string>(c, "kind", "constant"));
  cl.value = get_or<double>(c, "value", cl.value);
  cl.slope = get_or<double>(c, "slope", cl.slope);
  cl.clip = get_or<double>(c, "clip", cl.clip);
  cl.scale = get_or<double>(c, "scale", cl.scale);
  cl.amplitude = get_or<double>(c, "amplitude", cl.amplitude);
  cl.strike_low = get_or<double>(c, "strike_low", cl.strike_low);
  cl.strike_high = get_or<double>(c, "strike_high", cl.strike_high);
  cl.component = get_or<int>(c, "component", cl.component);
  return cl;
}

Numerics parse_numerics(const json& j) {
  check_keys(j, "numerics",
             {"n_paths", "n_steps", "seed", "basis_degree", "ridge", "picard_max_iter", "picard_damping", "tol_y0",
              "tol_path", "solution_cache"});
  Numerics n;
  n.n_paths = get_or<std::size_t>(j, "n_paths", n.n_paths);
  n.n_steps = get_or<int>(j, "n_steps", n.n_steps);
  n.seed = get_or<std::uint64_t>(j, "seed", n.seed);
  n.basis_degree = get_or<int>(j, "basis_degree", n.basis_degree);
  n.ridge = get_or<double>(j, "ridge", n.ridge);
  n.picard_max_iter = get_or<int>(j, "picard_max_iter", n.picard_max_iter);
  n.picard_damping = get_or<double>(j, "picard_damping", n.picard_damping);
  n.tol_y0 = get_or<double>(j, "tol_y0", n.tol_y0);
  n.tol_path = get_or<double>(j, "tol_path", n.tol_path);
  n.solution_cache = get_or<std::string>(j, "solution_cache", n.solution_cache);
  if (n.n_paths < 2) throw Error(ErrorCode::configuration_error, "numerics.n_paths must be at least 2");
  if (n.n_steps < 1) throw Error(ErrorCode::configuration_error, "numerics.n_steps must be at least 1");
  if (!(n.tol_y0 > 0.0) || !(n.tol_path > 0.0))
    throw Error(ErrorCode::configuration_error, "numerics tolerances must be positive");
  if (!(n.picard_damping > 0.0 && n.picard_damping <= 1.0))
    throw Error(ErrorCode::configuration_error, "numerics.picard_damping must lie in (0, 1]");
  if (n.basis_degree < 0) throw Error(ErrorCode::configuration_error, "numerics.basis_degree must be >= 0");
  if (n.ridge < 0.0) throw Error(ErrorCode::configuration_error, "numerics.ridge must be >= 0");
  if (n.picard_max_iter < 1) throw Error(ErrorCode::configuration_error, "numerics.picard_max_iter must be >= 1");
  return n;
}

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < text.size() && i + 1 < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

json parse_value_literal(const std::string& s) {
  try {
    return json::parse(s);
  } catch (const json::parse_error&) {
    return json(s);
  }
}

}  // namespace

std::string to_string(Task t) {
  switch (t) {
    case Task::closed_form: return "closed_form";
    case Task::numeric_solve: return "numeric_solve";
    case Task::verify: return "verify";
    case Task::price: return "price";
  }
  return "unknown";
}

Task task_from_string(const std::string& s) {
  if (s == "closed_form") return Task::closed_form;
  if (s == "numeric_solve") return Task::numeric_solve;
  if (s == "verify") return Task::verify;
  if (s == "price") return Task::price;
  throw Error(ErrorCode::configuration_error, "unknown task '" + s + "'");
}

Scenario scenario_from_json(const json& doc) {
  check_keys(doc, "scenario", {"market", "generator", "claim", "initial_wealth", "numerics", "tasks"});
  Scenario s;
  s.market = parse_market(require(doc, "market", "scenario"));
  s.generator = parse_generator(require(doc, "generator", "scenario"));
  s.claim = doc.contains("claim") ? parse_claim(doc.at("claim")) : Claim{};
  if (s.claim.depends_on_paths() && (s.claim.component < 0 || s.claim.component >= s.market.d))
    throw Error(ErrorCode::configuration_error, "claim.component outside Brownian dimension");
  s.initial_wealth = get_or<double>(doc, "initial_wealth", 0.0);
  s.numerics = doc.contains("numerics") ? parse_numerics(doc.at("numerics")) : Numerics{};
  auto tasks = get_or<std::vector<std::string>>(doc, "tasks", {"closed_form"});
  for (const auto& t : tasks) s.tasks.push_back(task_from_string(t));
  return s;
}

json Scenario::to_json() const {
  json j;
  j["market"] = {{"d", market.d},
                 {"n", market.n},
                 {"horizon", market.horizon},
                 {"mu", market.mu},
                 {"sigma", market.sigma},
                 {"s0", market.s0},
                 {"mu_bound", market.mu_bound},
                 {"theta_complement", market.theta_complement}};
  j["generator"] = {{"kind", generator.kind},   {"beta", generator.beta},   {"gamma", generator.gamma},
                    {"r", generator.r},         {"alpha", generator.alpha}, {"rho", generator.rho},
                    {"consumption", generator.consumption}};
  j["claim"] = {{"kind", fbsde::to_string(claim.kind)},
                {"value", claim.value},
                {"slope", claim.slope},
                {"clip", claim.clip},
                {"scale", claim.scale},
                {"amplitude", claim.amplitude},
                {"strike_low", claim.strike_low},
                {"strike_high", claim.strike_high},
                {"component", claim.component}};
  j["initial_wealth"] = initial_wealth;
  j["numerics"] = {{"n_paths", numerics.n_paths},
                   {"n_steps", numerics.n_steps},
                   {"seed", numerics.seed},
                   {"basis_degree", numerics.basis_degree},
                   {"ridge", numerics.ridge},
                   {"picard_max_iter", numerics.picard_max_iter},
                   {"picard_damping", numerics.picard_damping},
                   {"tol_y0", numerics.tol_y0},
                   {"tol_path", numerics.tol_path},
                   {"solution_cache", numerics.solution_cache}};
  json t = json::array();
  for (Task task : tasks) t.push_back(fbsde::to_string(task));
  j["tasks"] = t;
  return j;
}

json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    auto [line, col] = line_column(text, e.byte);
    std::ostringstream os;
    os << "malformed JSON at line " << line << ", column " << col << ": " << e.what();
    throw Error(ErrorCode::parse_error, os.str());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorCode::configuration_error, "override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw Error(ErrorCode::configuration_error, "empty key in override " + assignment);
    if (dot == std::string::npos) {
      (*node)[key] = parse_value_literal(assignment.substr(eq + 1));
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

json load_scenario_json(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::configuration_error, "cannot read scenario file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json doc = parse_json_text(buf.str());
  for (const auto& o : overrides) apply_override(doc, o);
  return doc;
}

Scenario load_scenario(const std::string& path, const std::vector<std::string>& overrides) {
  return scenario_from_json(load_scenario_json(path, overrides));
}

}  // namespace fbsde
