#pragma once

// Flat dotted-key configuration (sigma.alpha = 0.75, [solver] sections allowed) and the
// builders that turn it into models, solver settings and experiment plans.
//
// Every key is read through a typed getter with a default. The getter records the
// resolved value, so `resolved()` is the full configuration with all defaults filled in,
// and `reject_unused()` turns typos into errors.

#include "hspde/evolution.hpp"
#include "hspde/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hspde {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class Config {
 public:
  Config() = default;

  /// Parses TOML-style text. Arrays become multi-valued keys.
  static Config parse(std::istream& in, const std::string& base_dir = ".") {
    Config c;
    c.base_dir_ = base_dir;
    std::vector<CLI::ConfigItem> items;
    try {
      items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
    for (const auto& it : items) {
      if (it.name == "++" || it.name == "--") continue;  // section markers
      const std::string key = it.fullname();
      if (c.raw_.count(key)) throw ConfigError("duplicate config key '" + key + "'");
      c.raw_[key] = it.inputs;
    }
    return c;
  }

  static Config parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  /// Reads a config file, or the "config" object of a manifest.json.
  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    const auto dir = std::filesystem::absolute(path).parent_path().string();
    if (std::filesystem::path(path).extension() == ".json") {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse '" + path + "': " + e.what());
      }
      if (!j.contains("config") || !j["config"].is_object()) {
        throw ConfigError("'" + path + "' has no \"config\" object");
      }
      return from_json(j["config"], dir);
    }
    return parse(in, dir);
  }

  static Config from_json(const nlohmann::json& obj, const std::string& base_dir = ".") {
    Config c;
    c.base_dir_ = base_dir;
    for (const auto& [key, value] : obj.items()) {
      std::vector<std::string> inputs;
      if (value.is_array()) {
        for (const auto& v : value) inputs.push_back(scalar_text(v));
      } else {
        inputs.push_back(scalar_text(value));
      }
      c.raw_[key] = std::move(inputs);
    }
    return c;
  }

  /// Command-line overrides replace whatever the file says.
  void set(const std::string& key, std::vector<std::string> values) { raw_[key] = std::move(values); }
  void set(const std::string& key, const std::string& value) { raw_[key] = {value}; }

  [[nodiscard]] bool has(const std::string& key) const { return raw_.count(key) != 0; }

  double get_double(const std::string& key, double def) {
    const double v = has(key) ? to_double(key, single(key)) : def;
    resolved_[key] = v;
    return v;
  }

  long get_int(const std::string& key, long def) {
    const long v = has(key) ? to_int(key, single(key)) : def;
    resolved_[key] = v;
    return v;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t def) {
    std::uint64_t v = def;
    if (has(key)) {
      const std::string& s = single(key);
      std::size_t pos = 0;
      try {
        if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
        v = std::stoull(s, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != s.size()) throw ConfigError(key + ": expected an unsigned integer, got '" + s + "'");
    }
    resolved_[key] = v;
    return v;
  }

  bool get_bool(const std::string& key, bool def) {
    bool v = def;
    if (has(key)) {
      const std::string& s = single(key);
      if (s == "true" || s == "1") {
        v = true;
      } else if (s == "false" || s == "0") {
        v = false;
      } else {
        throw ConfigError(key + ": expected true or false, got '" + s + "'");
      }
    }
    resolved_[key] = v;
    return v;
  }

  std::string get_string(const std::string& key, const std::string& def) {
    const std::string v = has(key) ? single(key) : def;
    resolved_[key] = v;
    return v;
  }

  /// A file path, made absolute against the directory of the config file.
  std::string get_path(const std::string& key) {
    if (!has(key)) throw ConfigError(key + ": missing (required)");
    std::filesystem::path p(single(key));
    if (p.is_relative()) p = std::filesystem::path(base_dir_) / p;
    const std::string v = std::filesystem::weakly_canonical(p).string();
    resolved_[key] = v;
    return v;
  }

  std::vector<long> get_int_list(const std::string& key, const std::vector<long>& def) {
    std::vector<long> v = def;
    if (has(key)) {
      v.clear();
      for (const auto& s : split_list(raw_.at(key))) v.push_back(to_int(key, s));
    }
    resolved_[key] = v;
    return v;
  }

  std::vector<std::string> get_string_list(const std::string& key, const std::vector<std::string>& def) {
    const std::vector<std::string> v = has(key) ? split_list(raw_.at(key)) : def;
    resolved_[key] = v;
    return v;
  }

  std::vector<double> get_double_list(const std::string& key, const std::vector<double>& def) {
    std::vector<double> v = def;
    if (has(key)) {
      v.clear();
      for (const auto& s : split_list(raw_.at(key))) v.push_back(to_double(key, s));
    }
    resolved_[key] = v;
    return v;
  }

  /// Throws on keys that were never read: they are typos or belong to another command.
  void reject_unused() const {
    std::vector<std::string> unknown;
    for (const auto& [key, _] : raw_) {
      if (!resolved_.contains(key)) unknown.push_back(key);
    }
    if (unknown.empty()) return;
    std::string msg = "unknown config key";
    msg += unknown.size() > 1 ? "s" : "";
    for (std::size_t i = 0; i < unknown.size(); ++i) msg += (i ? ", '" : " '") + unknown[i] + "'";
    throw ConfigError(msg);
  }

  /// Every key read so far with its effective value.
  [[nodiscard]] const nlohmann::json& resolved() const { return resolved_; }

 private:
  static std::string scalar_text(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  }

  [[nodiscard]] const std::string& single(const std::string& key) const {
    const auto& v = raw_.at(key);
    if (v.size() != 1) throw ConfigError(key + ": expected a single value");
    return v.front();
  }

  // "--n-list 4,8" arrives as one comma-separated string
  static std::vector<std::string> split_list(const std::vector<std::string>& inputs) {
    std::vector<std::string> out;
    for (const auto& s : inputs) {
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
      }
    }
    return out;
  }

  static double to_double(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size()) throw ConfigError(key + ": expected a number, got '" + s + "'");
    return v;
  }

  static long to_int(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    long v = 0;
    try {
      v = std::stol(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
    return v;
  }

  std::map<std::string, std::vector<std::string>> raw_;
  nlohmann::json resolved_ = nlohmann::json::object();
  std::string base_dir_ = ".";
};

// ---- builders --------------------------------------------------------------------

inline Grid build_grid(Config& c) {
  const long dim = c.get_int("grid.dim", 1);
  const long n = c.get_int("grid.n_interior", 31);
  if (dim != 1 && dim != 2) throw ConfigError("grid.dim must be 1 or 2, got " + std::to_string(dim));
  if (n < 1) throw ConfigError("grid.n_interior must be >= 1, got " + std::to_string(n));
  return Grid(static_cast<int>(dim), static_cast<int>(n));
}

inline HolderSpec build_sigma(Config& c) {
  const std::string type = c.get_string("sigma.type", "power");
  if (type == "power") return power_law_sigma(c.get_double("sigma.alpha", 0.5), c.get_double("sigma.l_alpha", 1.0));
  if (type == "zero") return zero_sigma();
  if (type == "linear") return linear_sigma(c.get_double("sigma.slope", 1.0));
  throw ConfigError("sigma.type must be power, zero or linear, got '" + type + "'");
}

inline Kernel build_kernel(Config& c, const Grid& g) {
  const std::string type = c.get_string("kernel.type", "gaussian");
  if (type == "gaussian") {
    const double len = c.get_double("kernel.length", 0.1);
    if (!(len > 0.0)) throw ConfigError("kernel.length must be positive");
    return gaussian_kernel(g, len, c.get_double("kernel.amplitude", 1.0));
  }
  if (type == "constant") return constant_kernel(g, c.get_double("kernel.value", 0.0));
  if (type == "file") {
    Kernel k = load_kernel_csv(c.get_path("kernel.path"));
    if (!(k.grid == g)) throw ConfigError("kernel.path: kernel grid does not match grid.*");
    return k;
  }
  throw ConfigError("kernel.type must be gaussian, constant or file, got '" + type + "'");
}

inline LerayLionsCoeff build_coeff(Config& c, int dim) {
  const std::string type = c.get_string("coeff.type", "p_laplacian");
  const double p = c.get_double("coeff.p", 2.5);
  if (type == "p_laplacian") return p_laplacian(p);
  if (type == "p_laplacian_convection") return p_laplacian_convection(p, c.get_double("coeff.convection", 1.0), dim);
  throw ConfigError("coeff.type must be p_laplacian or p_laplacian_convection, got '" + type + "'");
}

inline DriftSpec build_drift(Config& c) {
  const std::string type = c.get_string("drift.type", "zero");
  if (type == "zero") return zero_drift();
  if (type == "sine") return sine_drift(c.get_double("drift.amplitude", -1.0));
  throw ConfigError("drift.type must be zero or sine, got '" + type + "'");
}

inline Model build_model(Config& c) {
  Model m;
  m.grid = build_grid(c);
  m.m = static_cast<int>(c.get_int("model.m", 2));
  m.coeff = build_coeff(c, m.grid.dimension());
  m.drift = build_drift(c);
  m.sigma = build_sigma(c);
  m.kernel = build_kernel(c, m.grid);
  m.num_modes = static_cast<int>(c.get_int("noise.modes", 0));
  if (m.num_modes < 0) throw ConfigError("noise.modes must be >= 0");
  m.coeff.validate(m.grid.dimension());
  return m;
}

inline SolverConfig build_solver(Config& c) {
  SolverConfig s;
  s.n = static_cast<int>(c.get_int("solver.n", s.n));
  s.dt = c.get_double("solver.dt", s.dt);
  s.t_end = c.get_double("solver.t_end", s.t_end);
  try {
    s.scheme = scheme_from_string(c.get_string("solver.scheme", to_string(s.scheme)));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("solver.scheme: ") + e.what());
  }
  s.newton_tol = c.get_double("solver.newton_tol", s.newton_tol);
  s.newton_max_iter = static_cast<int>(c.get_int("solver.newton_max_iter", s.newton_max_iter));
  s.record_every = static_cast<int>(c.get_int("solver.record_every", s.record_every));
  s.perturbation = c.get_bool("solver.perturbation", s.perturbation);
  s.raw_sigma = c.get_bool("solver.raw_sigma", s.raw_sigma);
  s.tabulate_sigma = c.get_bool("solver.tabulate_sigma", s.tabulate_sigma);
  s.sigma_grid_points = static_cast<int>(c.get_int("solver.sigma_grid_points", s.sigma_grid_points));
  s.max_dt_halvings = static_cast<int>(c.get_int("solver.max_dt_halvings", s.max_dt_halvings));
  s.blowup_threshold = c.get_double("solver.blowup_threshold", s.blowup_threshold);
  s.validate();
  return s;
}

/// Initial state under `prefix` (initial.type = sine | bump | random | file).
inline GridFunction build_initial(Config& c, const Grid& g, const std::string& prefix = "initial",
                                  const std::string& default_type = "sine", double default_amplitude = 1.0) {
  const std::string type = c.get_string(prefix + ".type", default_type);
  if (type == "sine") return sine_profile(g, c.get_double(prefix + ".amplitude", default_amplitude));
  if (type == "bump") {
    const double amp = c.get_double(prefix + ".amplitude", default_amplitude);
    const double center = c.get_double(prefix + ".center", 0.5);
    const double width = c.get_double(prefix + ".width", 0.25);
    if (!(width > 0.0)) throw ConfigError(prefix + ".width must be positive");
    return bump_profile(g, amp, center, width);
  }
  if (type == "random") {
    const auto seed = c.get_u64(prefix + ".seed", 1);
    const double amp = c.get_double(prefix + ".amplitude", default_amplitude);
    const long modes = c.get_int(prefix + ".modes", 8);
    if (modes < 1) throw ConfigError(prefix + ".modes must be >= 1");
    return random_profile(g, seed, amp, static_cast<int>(modes));
  }
  if (type == "file") return load_grid_function_csv(g, c.get_path(prefix + ".path"));
  throw ConfigError(prefix + ".type must be sine, bump, random or file, got '" + type + "'");
}

inline std::vector<int> to_int_vector(const std::vector<long>& xs) { return {xs.begin(), xs.end()}; }

/// Run-level settings shared by all commands; --seed, --paths and --n-list override them.
struct RunSettings {
  std::uint64_t seed = 0;
  std::size_t paths = 1;
  std::vector<int> n_list;
};

inline RunSettings build_run(Config& c, std::size_t default_paths, const std::vector<long>& default_n_list) {
  RunSettings r;
  r.seed = c.get_u64("run.seed", 0);
  const long paths = c.get_int("run.paths", static_cast<long>(default_paths));
  if (paths < 1) throw ConfigError("run.paths must be >= 1, got " + std::to_string(paths));
  r.paths = static_cast<std::size_t>(paths);
  r.n_list = to_int_vector(c.get_int_list("run.n_list", default_n_list));
  for (int n : r.n_list) {
    if (n < 1) throw ConfigError("run.n_list entries must be >= 1");
  }
  return r;
}

inline Tolerances build_tolerances(Config& c) {
  Tolerances t;
  t.slack = c.get_double("check.slack", t.slack);
  t.se_multiplier = c.get_double("check.se_multiplier", t.se_multiplier);
  t.uniform_factor = c.get_double("check.uniform_factor", t.uniform_factor);
  return t;
}

inline RegularizationStudyOptions build_regcheck(Config& c, const RunSettings& run) {
  RegularizationStudyOptions o;
  const auto s = build_sigma(c);
  if (s.name == "zero") throw ConfigError("regcheck needs a non-zero sigma");
  o.alpha = s.alpha;
  o.l_alpha = s.l_alpha;
  o.n_list = run.n_list;
  o.lambda_range = c.get_double("regcheck.lambda_range", o.lambda_range);
  o.grid_points = static_cast<int>(c.get_int("regcheck.grid_points", o.grid_points));
  o.slope_grid_points = static_cast<int>(c.get_int("regcheck.slope_grid_points", o.slope_grid_points));
  o.rel_tol = c.get_double("regcheck.rel_tol", o.rel_tol);
  o.slope_tol = c.get_double("regcheck.slope_tol", o.slope_tol);
  o.tight_tol = c.get_double("regcheck.tight_tol", o.tight_tol);
  if (!(o.lambda_range > 0.0)) throw ConfigError("regcheck.lambda_range must be positive");
  if (o.grid_points < 2) throw ConfigError("regcheck.grid_points must be >= 2");
  if (o.slope_grid_points < 2) throw ConfigError("regcheck.slope_grid_points must be >= 2");
  return o;
}

inline HeatOracleOptions build_heat(Config& c) {
  HeatOracleOptions o;
  o.n_interior = static_cast<int>(c.get_int("heat.n_interior", o.n_interior));
  o.dt = c.get_double("heat.dt", o.dt);
  o.t_end = c.get_double("heat.t_end", o.t_end);
  o.error_tol = c.get_double("heat.error_tol", o.error_tol);
  o.richardson_n = to_int_vector(c.get_int_list("heat.richardson_n", {o.richardson_n.begin(), o.richardson_n.end()}));
  o.richardson_slope = c.get_double("heat.richardson_slope", o.richardson_slope);
  o.richardson_tol = c.get_double("heat.richardson_tol", o.richardson_tol);
  return o;
}

/// The experiments run by `verify`, each on the shared model with its own overrides.
struct VerifyPlan {
  ExperimentPlan base;
  std::vector<std::string> experiments;
  // contraction
  std::vector<double> contraction_l_f{0.0, 1.0};
  ContractionOptions contraction;
  GridFunction contraction_shift;  // u0_b = u0_a + shift
  SolverConfig contraction_solver;
  // cauchy
  SolverConfig cauchy_solver;
  // heat / regularization
  HeatOracleOptions heat;
  RegularizationStudyOptions regularization;
};

inline const std::vector<std::string>& known_experiments() {
  static const std::vector<std::string> k{"regularization", "heat", "energy", "contraction", "cauchy"};
  return k;
}

inline VerifyPlan build_verify(Config& c, const RunSettings& run, unsigned workers) {
  VerifyPlan v;
  auto& plan = v.base;
  plan.model = build_model(c);
  plan.base = build_solver(c);
  plan.u0 = build_initial(c, plan.model.grid);
  plan.n_list = run.n_list;
  plan.num_paths = run.paths;
  plan.master_seed = run.seed;
  plan.workers = workers;
  plan.tol = build_tolerances(c);
  if (plan.num_paths < 2) throw ConfigError("run.paths must be >= 2 for verify, got " + std::to_string(plan.num_paths));

  const auto list = c.get_string_list("verify.experiments", {"energy", "contraction", "cauchy"});
  std::set<std::string> seen;
  for (const auto& e : list) {
    if (std::find(known_experiments().begin(), known_experiments().end(), e) == known_experiments().end()) {
      throw ConfigError("verify.experiments: unknown experiment '" + e + "'");
    }
    if (!seen.insert(e).second) throw ConfigError("verify.experiments: '" + e + "' listed twice");
  }
  v.experiments = list;
  const auto wants = [&](const std::string& e) { return seen.count(e) != 0; };

  if (wants("contraction")) {
    if (plan.model.sigma.alpha < 0.5) {
      throw ConfigError("sigma.alpha=" + std::to_string(plan.model.sigma.alpha) +
                        " is below 1/2; the contraction experiment requires sigma.alpha >= 0.5");
    }
    v.contraction_l_f = c.get_double_list("contraction.l_f", v.contraction_l_f);
    for (double l : v.contraction_l_f) {
      if (!(l >= 0.0)) throw ConfigError("contraction.l_f entries must be non-negative");
    }
    v.contraction.checkpoints = static_cast<int>(c.get_int("contraction.checkpoints", 10));
    v.contraction.coupling_sanity = c.get_bool("contraction.coupling_sanity", true);
    v.contraction_shift = build_initial(c, plan.model.grid, "contraction.shift", "bump", 0.1);
    v.contraction_solver = plan.base;
    v.contraction_solver.n = static_cast<int>(c.get_int("contraction.n", plan.n_list.front()));
    v.contraction_solver.t_end = c.get_double("contraction.t_end", plan.base.t_end);
    v.contraction_solver.raw_sigma = c.get_bool("contraction.raw_sigma", true);
    v.contraction_solver.perturbation = c.get_bool("contraction.perturbation", false);
    v.contraction_solver.validate();
  }
  if (wants("cauchy")) {
    v.cauchy_solver = plan.base;
    v.cauchy_solver.t_end = c.get_double("cauchy.t_end", plan.base.t_end);
    v.cauchy_solver.validate();
  }
  if (wants("heat")) v.heat = build_heat(c);
  if (wants("regularization")) v.regularization = build_regcheck(c, run);
  return v;
}

}  // namespace hspde
