#pragma once

// Command-line front end.
//
//   flexalloc run <config.json> [--out DIR]
//   flexalloc scenario s1|s2 [--seed N] [--ticks N] [--out DIR]
//   flexalloc check <config.json> [--dump-polytopes DIR]
//   flexalloc monitors <trace.csv> <config.json>
//
// Exit codes: 0 success, 1 configuration or input error, 2 monitor
// violation.  Worker count comes from the FLEXALLOC_WORKERS environment
// variable (default 1; results are identical either way).

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flexalloc/harness.hpp"
#include "flexalloc/parallel.hpp"
#include "flexalloc/qos.hpp"

namespace flexalloc {

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline int run_and_emit(const SimConfig& cfg, const std::string& out_dir,
                        int workers, std::ostream& os) {
  const RunOutputs out = run_simulation(cfg, workers);
  if (!out_dir.empty()) write_artifacts(out, out_dir);
  os << make_report(out).dump(2) << '\n';
  if (out.monitors &&
      !monitor_verdict(cfg.monitors, *out.monitors).pass)
    return 2;
  return 0;
}

}  // namespace detail

/// Entry point taking argv[1..] (program name excluded).
inline int cli_main(std::vector<std::string> args) {
  CLI::App app{"flexalloc: predictive flexible-load allocation simulator"};
  app.require_subcommand(1);

  std::string run_config, run_out;
  auto* cmd_run =
      app.add_subcommand("run", "Run a simulation described by a config JSON");
  cmd_run->add_option("config", run_config, "config JSON path")->required();
  cmd_run->add_option("--out", run_out,
                      "output directory (overrides the config's out_dir)");

  std::string scen_name, scen_out;
  std::optional<std::uint64_t> scen_seed;
  std::optional<std::int64_t> scen_ticks;
  auto* cmd_scen = app.add_subcommand("scenario", "Run a packaged scenario");
  cmd_scen->add_option("name", scen_name, "s1 (windup step) or s2 (tracking)")
      ->required()
      ->check(CLI::IsMember({"s1", "s2"}));
  cmd_scen->add_option("--seed", scen_seed, "RNG seed override");
  cmd_scen->add_option("--ticks", scen_ticks, "tick count override");
  cmd_scen->add_option("--out", scen_out, "output directory (default out_<name>)");

  std::string chk_config, chk_dump;
  auto* cmd_chk = app.add_subcommand(
      "check", "Per-load feasibility table and step-size report for a config");
  cmd_chk->add_option("config", chk_config, "config JSON path")->required();
  cmd_chk->add_option("--dump-polytopes", chk_dump,
                      "also write each load's constraint rows as CSV here");

  std::string mon_trace, mon_config;
  auto* cmd_mon = app.add_subcommand(
      "monitors",
      "Re-run a config, verify the given trace matches byte-for-byte, and "
      "report the monitor verdict (compares the primal trace when a config "
      "runs both controllers)");
  cmd_mon->add_option("trace", mon_trace, "previously emitted trace.csv")
      ->required();
  cmd_mon->add_option("config", mon_config, "config JSON path")->required();

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  const int workers = env_worker_count();
  try {
    if (app.got_subcommand(cmd_run)) {
      const SimConfig cfg = load_config(run_config);
      const std::string dir = !run_out.empty() ? run_out : cfg.out_dir;
      return detail::run_and_emit(cfg, dir, workers, std::cout);
    }

    if (app.got_subcommand(cmd_scen)) {
      const SimConfig cfg =
          scen_name == "s1"
              ? scenario_s1(scen_ticks.value_or(400), scen_seed.value_or(0))
              : scenario_s2(scen_seed.value_or(1), scen_ticks.value_or(288));
      const std::string dir =
          !scen_out.empty() ? scen_out : "out_" + scen_name;
      return detail::run_and_emit(cfg, dir, workers, std::cout);
    }

    if (app.got_subcommand(cmd_chk)) {
      const SimConfig cfg = load_config(chk_config);
      const std::vector<LoadQoS> fleet = build_fleet(cfg);
      if (!chk_dump.empty()) std::filesystem::create_directories(chk_dump);
      nlohmann::json loads = nlohmann::json::array();
      int offending = -1;
      for (size_t i = 0; i < fleet.size(); ++i) {
        const QoSPolytope p = build_polytope(fleet[i], cfg.horizon);
        const FeasibilityResult f = check_nonempty(p);
        loads.push_back({{"load", i}, {"feasible", f.nonempty}});
        if (!f.nonempty && offending < 0) offending = static_cast<int>(i);
        if (!chk_dump.empty()) {
          std::ofstream pcsv(std::filesystem::path(chk_dump) /
                             ("polytope_" + std::to_string(i) + ".csv"));
          polytope_to_csv(p, pcsv);
        }
      }
      const StepSizeBound b = step_size_bound(fleet, cfg.horizon);
      nlohmann::json rep{
          {"loads", loads},
          {"all_feasible", offending < 0},
          {"capacity_lo_kw", sum_d_lo(fleet)},
          {"capacity_hi_kw", sum_d_hi(fleet)},
          {"step_size",
           {{"alpha_sufficient", b.alpha_sufficient},
            {"alpha_exact_max", b.alpha_exact_max},
            {"lambda_min", b.lambda_min},
            {"lambda_max", b.lambda_max},
            {"alpha_default", cfg.alpha.value_or(0.99 * b.alpha_sufficient)},
            {"gamma_default",
             cfg.gamma.value_or(0.99 / dual_response_lipschitz(fleet))}}}};
      std::cout << rep.dump(2) << '\n';
      if (offending >= 0) {
        std::cerr << "infeasible QoS set at load " << offending << '\n';
        return 1;
      }
      return 0;
    }

    if (app.got_subcommand(cmd_mon)) {
      const SimConfig cfg = load_config(mon_config);
      const RunOutputs out = run_simulation(cfg, workers);
      const SimTrace& fresh = out.primal ? *out.primal : *out.dual;
      std::ostringstream ss;
      trace_to_csv(fresh, ss);
      const std::string got = detail::read_file_bytes(mon_trace);
      if (got != ss.str()) {
        std::cerr << "trace file does not match a fresh run of the config\n";
        return 1;
      }
      std::istringstream is(got);
      const SimTrace parsed = trace_from_csv(is);
      const double lo = sum_d_lo(out.fleet), hi = sum_d_hi(out.fleet);
      if (detail::summary_json(parsed, lo, hi).dump() !=
          detail::summary_json(fresh, lo, hi).dump()) {
        std::cerr << "summary recomputed from the CSV differs from the "
                     "in-memory summary\n";
        return 1;
      }
      nlohmann::json j =
          out.monitors
              ? detail::monitors_json(cfg.monitors, *out.monitors)
              : nlohmann::json{{"verdict", "pass"},
                               {"note", "no monitors enabled in config"}};
      j["trace_match"] = true;
      j["summary_pure"] = true;
      std::cout << j.dump(2) << '\n';
      if (out.monitors &&
          !monitor_verdict(cfg.monitors, *out.monitors).pass)
        return 2;
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace flexalloc
