#pragma once

// Subcommands of the hspde tool: regcheck, simulate, verify.
// Exit codes: 0 pass, 1 failed check, 2 usage or config error, 3 numerical blow-up.

#include "hspde/config.hpp"
#include "hspde/evolution.hpp"
#include "hspde/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace hspde {

#ifdef HSPDE_VERSION
inline constexpr const char* kVersion = HSPDE_VERSION;
#else
inline constexpr const char* kVersion = "0.1.0";
#endif

enum ExitCode : int { kPass = 0, kCheckFailed = 1, kUsageError = 2, kBlowUp = 3 };

/// Flags shared by every subcommand.
struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<long> paths;
  std::string n_list;
  unsigned workers = 0;  // 0 = all cores
};

namespace detail {

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Config from --config (a TOML-style file or an earlier manifest.json) plus flag overrides.
inline Config load_config(const CommonArgs& a, const std::string& command) {
  Config c;
  if (!a.config.empty()) {
    if (std::filesystem::path(a.config).extension() == ".json") {
      std::ifstream in(a.config);
      if (!in) throw ConfigError("cannot read config file '" + a.config + "'");
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse '" + a.config + "': " + e.what());
      }
      if (j.contains("command") && j["command"] != command) {
        throw ConfigError("manifest '" + a.config + "' belongs to command '" + j["command"].get<std::string>() + "'");
      }
    }
    c = Config::from_file(a.config);
  }
  if (a.seed) c.set("run.seed", std::to_string(*a.seed));
  if (a.paths) c.set("run.paths", std::to_string(*a.paths));
  if (!a.n_list.empty()) c.set("run.n_list", std::vector<std::string>{a.n_list});
  return c;
}

inline std::filesystem::path prepare_out(const CommonArgs& a) {
  if (a.out.empty()) throw ConfigError("--out is required");
  std::filesystem::path out(a.out);
  std::filesystem::create_directories(out);
  return out;
}

inline void write_manifest(const std::filesystem::path& out, const std::string& command, const CommonArgs& a,
                           const Config& c, std::uint64_t seed) {
  nlohmann::json m;
  m["tool"] = "hspde";
  m["version"] = kVersion;
  m["command"] = command;
  m["config_path"] = a.config.empty() ? "" : std::filesystem::weakly_canonical(a.config).string();
  m["out_dir"] = std::filesystem::weakly_canonical(out).string();
  m["seed"] = seed;
  m["config"] = c.resolved();
  write_json(m, out / "manifest.json");
}

inline unsigned resolve_workers(unsigned w) { return w == 0 ? default_workers() : w; }

inline void print_checks(const Report& r, std::ostream& os) {
  for (const auto& ch : r.checks) {
    os << (ch.pass ? "PASS " : "FAIL ") << r.name << ": " << ch.name << " estimate=" << ch.estimate
       << " bound=" << ch.bound << '\n';
  }
}

inline std::string lf_label(double l) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", l);
  return buf;
}

}  // namespace detail

// ---- regcheck --------------------------------------------------------------------

inline int cmd_regcheck(const CommonArgs& a, std::ostream& os = std::cout) {
  Config c = detail::load_config(a, "regcheck");
  const RunSettings run = build_run(c, 1, {2, 4, 8, 16, 32, 64, 128, 256});
  const auto opt = build_regcheck(c, run);
  c.reject_unused();
  const auto out = detail::prepare_out(a);
  detail::write_manifest(out, "regcheck", a, c, run.seed);
  const Report rep = regularization_study(opt);
  nlohmann::json j = {{"command", "regcheck"}, {"pass", rep.pass()}, {"reports", {to_json(rep)}}};
  detail::write_json(j, out / "report.json");
  for (const auto& t : rep.tables) write_csv(t, (out / t.file).string());
  detail::print_checks(rep, os);
  return rep.pass() ? kPass : kCheckFailed;
}

// ---- simulate --------------------------------------------------------------------

inline int cmd_simulate(const CommonArgs& a, std::ostream& os = std::cout) {
  Config c = detail::load_config(a, "simulate");
  const Model model = build_model(c);
  SolverConfig solver = build_solver(c);
  const GridFunction u0 = build_initial(c, model.grid);
  const RunSettings run = build_run(c, 1, {solver.n});
  if (run.n_list.size() != 1) throw ConfigError("simulate takes exactly one n (run.n_list)");
  solver.n = run.n_list.front();
  solver.seed = run.seed;
  c.reject_unused();
  const auto out = detail::prepare_out(a);
  detail::write_manifest(out, "simulate", a, c, run.seed);

  const Integrator integ(model, solver);
  const unsigned workers = detail::resolve_workers(a.workers);
  nlohmann::json paths = nlohmann::json::array();
  std::optional<BlowUp> blowup;
  std::size_t failed_path = 0;
  std::vector<std::optional<TrajectoryRecord>> recs;
  try {
    auto all = parallel_map<TrajectoryRecord>(run.paths, workers, [&](std::size_t i) {
      auto sampler = integ.make_sampler(i);
      return simulate_path(integ, u0, sampler);
    });
    for (auto& r : all) recs.emplace_back(std::move(r));
  } catch (const BlowUp& e) {
    blowup = e;
  } catch (const NewtonDiverged& e) {
    blowup = BlowUp(e.what(), -1, 0.0);
  }
  if (blowup) {
    // rerun sequentially to find the first failing path; earlier paths are written normally
    for (std::size_t i = 0; i < run.paths; ++i) {
      auto sampler = integ.make_sampler(i);
      try {
        recs.emplace_back(simulate_path(integ, u0, sampler));
      } catch (const std::exception&) {
        failed_path = i;
        break;
      }
    }
  }
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = *recs[i];
    const std::string stem = "path_" + std::to_string(i);
    write_energy_csv(r, (out / (stem + "_energy.csv")).string());
    if (solver.keep_states) write_states_csv(r, (out / (stem + "_states.csv")).string());
    save_grid_function_csv(r.final_state, (out / (stem + "_final.csv")).string());
    paths.push_back({{"path", i},
                     {"steps", r.steps},
                     {"initial_l2_sq", r.initial_l2_sq},
                     {"final_l2_sq", r.final_l2_sq},
                     {"sup_l2_sq", r.sup_l2_sq},
                     {"int_grad_lp_p", r.int_grad_lp_p},
                     {"int_hm0_sq", r.int_hm0_sq},
                     {"int_wmq_q", r.int_wmq_q},
                     {"total_newton_iters", r.total_newton_iters},
                     {"dt_halvings", r.dt_halvings},
                     {"max_newton_residual", r.max_newton_residual},
                     {"ledger", {{"drift", r.ledger.drift},
                                 {"martingale", r.ledger.martingale},
                                 {"quadratic", r.ledger.quadratic}}}});
  }
  nlohmann::json j = {{"command", "simulate"}, {"paths", paths}, {"blowup", nullptr}};
  if (blowup) {
    j["blowup"] = {{"path", failed_path}, {"step", blowup->step}, {"time", blowup->time}, {"message", blowup->what()}};
  }
  detail::write_json(j, out / "report.json");
  if (blowup) {
    os << "blow-up on path " << failed_path << ": " << blowup->what() << '\n';
    return kBlowUp;
  }
  os << "simulated " << run.paths << " path(s), n=" << solver.n << ", " << integ.config().num_steps() << " steps\n";
  return kPass;
}

// ---- verify ----------------------------------------------------------------------

/// Runs one named experiment of a verify plan. Contraction yields one report per L_f.
inline std::vector<Report> run_experiment(const VerifyPlan& v, const std::string& name) {
  if (name == "regularization") return {regularization_study(v.regularization)};
  if (name == "heat") return {heat_oracle_study(v.heat)};
  if (name == "energy") return {energy_report(v.base)};
  if (name == "cauchy") {
    ExperimentPlan p = v.base;
    p.base = v.cauchy_solver;
    return {cauchy_in_n_study(p)};
  }
  if (name == "contraction") {
    std::vector<Report> out;
    for (double l : v.contraction_l_f) {
      ExperimentPlan p = v.base;
      p.base = v.contraction_solver;
      p.n_list = {v.contraction_solver.n};
      p.model.drift = l == 0.0 ? zero_drift() : sine_drift(-l);
      const GridFunction u0_b = p.u0 + v.contraction_shift;
      Report r = contraction_experiment(p, p.u0, u0_b, v.contraction);
      const std::string label = detail::lf_label(l);
      r.name = "contraction_lf" + label;
      r.metadata["drift"] = l == 0.0 ? "zero" : "-" + label + " sin(u)";
      for (auto& t : r.tables) t.file = "contraction_lf" + label + ".csv";
      out.push_back(std::move(r));
    }
    return out;
  }
  throw ConfigError("unknown experiment '" + name + "'");
}

inline int cmd_verify(const CommonArgs& a, std::ostream& os = std::cout) {
  Config c = detail::load_config(a, "verify");
  const RunSettings run = build_run(c, 64, {4, 8, 16, 32});
  const unsigned workers = detail::resolve_workers(a.workers);
  const VerifyPlan v = build_verify(c, run, workers);
  v.base.validate();
  c.reject_unused();
  const auto out = detail::prepare_out(a);
  detail::write_manifest(out, "verify", a, c, run.seed);

  nlohmann::json reports = nlohmann::json::array();
  bool pass = true;
  for (const auto& name : v.experiments) {
    std::vector<Report> reps;
    try {
      reps = run_experiment(v, name);
    } catch (const BlowUp& e) {
      detail::write_json({{"command", "verify"}, {"pass", false}, {"reports", reports},
                          {"blowup", {{"experiment", name}, {"message", e.what()}}}},
                         out / "report.json");
      os << "blow-up in " << name << ": " << e.what() << '\n';
      return kBlowUp;
    }
    for (const auto& r : reps) {
      reports.push_back(to_json(r));
      for (const auto& t : r.tables) write_csv(t, (out / t.file).string());
      detail::print_checks(r, os);
      pass = pass && r.pass();
    }
  }
  detail::write_json({{"command", "verify"}, {"pass", pass}, {"reports", reports}}, out / "report.json");
  os << (pass ? "all checks passed\n" : "some checks failed\n");
  return pass ? kPass : kCheckFailed;
}

// ---- entry point -----------------------------------------------------------------

inline int run_cli(int argc, char** argv, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Simulator and verification harness for stochastic p-Laplace equations with Hoelder noise"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  CommonArgs args;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config, "config file (TOML-style) or manifest.json of an earlier run");
    sub->add_option("--out", args.out, "output directory")->required();
    sub->add_option("--seed", args.seed, "master seed (overrides run.seed)");
    sub->add_option("--paths", args.paths, "number of paths (overrides run.paths)");
    sub->add_option("--n-list", args.n_list, "comma-separated regularization levels (overrides run.n_list)");
    sub->add_option("--workers", args.workers, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
  };
  auto* regcheck = app.add_subcommand("regcheck", "check the Lipschitz regularization of sigma");
  auto* simulate = app.add_subcommand("simulate", "simulate paths and write trajectories");
  auto* verify = app.add_subcommand("verify", "run the Monte Carlo verification experiments");
  for (auto* s : {regcheck, simulate, verify}) add_common(s);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, os, err);
    return rc == 0 ? kPass : kUsageError;
  }
  try {
    if (regcheck->parsed()) return cmd_regcheck(args, os);
    if (simulate->parsed()) return cmd_simulate(args, os);
    return cmd_verify(args, os);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const BlowUp& e) {
    err << "blow-up: " << e.what() << '\n';
    return kBlowUp;
  } catch (const NewtonDiverged& e) {
    err << "blow-up: " << e.what() << '\n';
    return kBlowUp;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }
}

}  // namespace hspde
