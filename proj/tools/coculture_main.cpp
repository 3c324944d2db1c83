#include <coculture/config.hpp>
#include <coculture/harness.hpp>
#include <coculture/metrics.hpp>
#include <coculture/rl.hpp>
#include <coculture/sysid.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace coculture;

const char* signal_name(harness::Signal s) {
  switch (s) {
    case harness::Signal::ratio: return "ratio";
    case harness::Signal::od: return "od";
    case harness::Signal::x2r: return "x2r";
  }
  return "?";
}

void print_stats(const std::vector<harness::StatsRow>& rows) {
  std::printf("%-6s %-4s %-6s %-22s %-22s %s\n", "signal", "seg", "ref",
              "settling (min)", "nrmse", "excluded");
  for (const auto& r : rows) {
    char settle[48], err[48];
    if (r.settling.n > 0)
      std::snprintf(settle, sizeof(settle), "%.2f +/- %.2f (n=%d)",
                    r.settling.mean, r.settling.sd, r.settling.n);
    else
      std::snprintf(settle, sizeof(settle), "--");
    if (r.nrmse.n > 0)
      std::snprintf(err, sizeof(err), "%.4f +/- %.4f (n=%d)", r.nrmse.mean,
                    r.nrmse.sd, r.nrmse.n);
    else
      std::snprintf(err, sizeof(err), "--");
    std::printf("%-6s %-4d %-6.3g %-22s %-22s %d\n", signal_name(r.signal),
                r.segment, r.reference, settle, err, r.excluded);
  }
}

int cmd_list(const std::vector<harness::Scenario>& scenarios) {
  for (const auto& s : scenarios) {
    std::printf("%-20s duration %5.0f min  mixing=%s reservoir=%s\n",
                s.name.c_str(), s.duration_min,
                harness::to_string(s.mixing).c_str(),
                harness::to_string(s.reservoir).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coculture: two-chamber microbial consortium control stack"};
  app.require_subcommand(1);

  // --- run ---
  auto* run = app.add_subcommand("run", "Run a closed-loop scenario");
  std::string scenario_name, mode = "coupled";
  std::string mixing_sel, reservoir_sel, config_path;
  std::string mixing_weights, reservoir_weights, exchange_dir;
  std::string out_path, long_out_path;
  std::optional<std::uint64_t> seed_opt;
  bool keep_exchange = false;
  run->add_option("scenario", scenario_name, "builtin scenario name")
      ->required();
  run->add_option("--mode", mode, "coupled|exchange");
  run->add_option("--controller-mixing", mixing_sel, "switching|dqn|none");
  run->add_option("--controller-reservoir", reservoir_sel, "pi|mpc|dqn|none");
  run->add_option("--seed", seed_opt, "replicate seed");
  run->add_option("--out", out_path, "trace CSV output path");
  run->add_option("--long-out", long_out_path, "plot-ready long-format CSV");
  run->add_option("--config", config_path, "key-value config file");
  run->add_option("--mixing-weights", mixing_weights, "mixing DQN weight file");
  run->add_option("--reservoir-weights", reservoir_weights,
                  "reservoir DQN weight file");
  run->add_option("--exchange-dir", exchange_dir,
                  "directory for exchange-mode files (kept after the run)");
  run->add_flag("--keep-exchange-files", keep_exchange);

  // --- train ---
  auto* train = app.add_subcommand("train", "Train a DQN policy on the simulator");
  std::string env_name, train_out, train_log, train_config;
  std::uint64_t train_seed = 0;
  train->add_option("env", env_name, "mixing|reservoir")->required();
  train->add_option("--out", train_out, "weight file output")->required();
  train->add_option("--log", train_log, "per-episode return CSV");
  train->add_option("--config", train_config, "key-value config file");
  train->add_option("--seed", train_seed, "training seed");

  // --- identify ---
  auto* identify = app.add_subcommand(
      "identify", "Fit growth parameters from open-loop monoculture traces");
  std::vector<std::string> id_traces;
  std::string id_out, id_config;
  bool id_synthetic = false;
  std::uint64_t id_seed = 0;
  identify->add_option("--traces", id_traces, "trace CSV files");
  identify->add_flag("--synthetic", id_synthetic,
                     "generate the two monoculture traces in simulation");
  identify->add_option("--seed", id_seed, "seed for --synthetic");
  identify->add_option("--out", id_out, "write fitted parameters (config format)");
  identify->add_option("--config", id_config, "key-value config file");

  // --- evaluate ---
  auto* evaluate = app.add_subcommand("evaluate", "Metrics over recorded traces");
  std::vector<std::string> ev_traces, ev_versus;
  std::string ev_source = "truth";
  evaluate->add_option("--traces", ev_traces, "trace CSV files")->required();
  evaluate->add_option("--versus", ev_versus,
                       "second controller variant for paired t-tests");
  evaluate->add_option("--source", ev_source, "truth|estimate|facs");

  // --- list-scenarios ---
  auto* list = app.add_subcommand("list-scenarios", "List builtin scenarios");

  CLI11_PARSE(app, argc, argv);

  try {
    harness::Config config;
    plant::PlantParams params;
    observer::EkfConfig ekf;
    rl::TrainConfig tcfg;

    auto load_config = [&](const std::string& path) {
      if (path.empty()) return;
      config = harness::Config::load(path);
      config.apply(params);
      config.apply(ekf);
      config.apply(tcfg);
    };

    if (list->parsed()) {
      return cmd_list(harness::builtin_scenarios());
    }

    if (run->parsed()) {
      load_config(config_path);
      auto scenarios = harness::builtin_scenarios(params);
      harness::Scenario scenario =
          harness::find_scenario(scenarios, scenario_name);
      if (!mixing_sel.empty())
        scenario.mixing = harness::mixing_controller_from_string(mixing_sel);
      if (!reservoir_sel.empty())
        scenario.reservoir =
            harness::reservoir_controller_from_string(reservoir_sel);

      harness::RunOptions opts;
      opts.params = params;
      opts.ekf = ekf;
      opts.config_hash = config.hash();
      opts.mode = mode == "exchange" ? harness::Mode::exchange
                                     : harness::Mode::coupled;
      if (!exchange_dir.empty()) {
        opts.exchange_dir = exchange_dir;
        opts.keep_exchange_files = true;
      }
      if (keep_exchange) opts.keep_exchange_files = true;

      rl::QNetwork mixing_net, reservoir_net;
      if (scenario.mixing == harness::MixingController::dqn) {
        if (mixing_weights.empty())
          throw std::runtime_error("--mixing-weights required for DQN");
        mixing_net = rl::load_qnetwork(mixing_weights);
        opts.mixing_net = &mixing_net;
      }
      if (scenario.reservoir == harness::ReservoirController::dqn) {
        if (reservoir_weights.empty())
          throw std::runtime_error("--reservoir-weights required for DQN");
        reservoir_net = rl::load_qnetwork(reservoir_weights);
        opts.reservoir_net = &reservoir_net;
      }

      const std::uint64_t seed =
          seed_opt.value_or(scenario.seeds.empty() ? 0 : scenario.seeds[0]);
      const harness::ScenarioTrace trace =
          harness::run_scenario(scenario, seed, opts);
      if (!out_path.empty()) harness::write_trace_csv(trace, out_path);
      if (!long_out_path.empty())
        harness::write_trace_long_csv(trace, long_out_path);
      print_stats(harness::replicate_stats({trace}));
      return 0;
    }

    if (train->parsed()) {
      if (env_name != "mixing" && env_name != "reservoir")
        throw std::runtime_error("env must be mixing|reservoir");
      const rl::EnvKind env = env_name == "mixing" ? rl::EnvKind::mixing
                                                   : rl::EnvKind::reservoir;
      tcfg = rl::default_train_config(env);
      load_config(train_config);
      const auto result = rl::train_dqn(env, params, tcfg, train_seed);
      rl::save_qnetwork(result.net, train_out);
      if (!train_log.empty()) {
        std::ofstream log(train_log);
        log << "episode,return\n";
        for (std::size_t i = 0; i < result.episode_returns.size(); ++i)
          log << i << "," << result.episode_returns[i] << "\n";
      }
      std::printf("trained %s policy over %d episodes -> %s\n",
                  env_name.c_str(), tcfg.episodes, train_out.c_str());
      return 0;
    }

    if (identify->parsed()) {
      load_config(id_config);
      std::vector<harness::ScenarioTrace> traces;
      if (id_synthetic) {
        sysid::OpenLoopConfig c1;
        c1.strain = 1;
        c1.duration_min = 360.0;
        c1.schedule.levels = {0.012, 0.0, 0.018, 0.006, 0.02, 0.003};
        sysid::OpenLoopConfig c2 = c1;
        c2.strain = 2;
        traces.push_back(sysid::generate_openloop_trace(params, c1, id_seed));
        traces.push_back(
            sysid::generate_openloop_trace(params, c2, id_seed + 1));
      }
      for (const auto& path : id_traces)
        traces.push_back(harness::read_trace_csv(path));
      const auto fit = sysid::fit_growth_params(traces);
      std::printf("mu1_star = %.6g\nmu2_star = %.6g\ntau = %.6g%s\n",
                  fit.mu1_star, fit.mu2_star, fit.tau,
                  fit.tau_identifiable ? "" : "  (unidentifiable: no dilution)");
      for (std::size_t i = 0; i < fit.rmse.size(); ++i)
        std::printf("trace %zu rmse = %.6g\n", i, fit.rmse[i]);
      if (!id_out.empty()) {
        harness::Config out;
        out.set("plant.mu1_star", std::to_string(fit.mu1_star));
        out.set("plant.mu2_star", std::to_string(fit.mu2_star));
        out.set("plant.tau", std::to_string(fit.tau));
        out.save(id_out);
      }
      return 0;
    }

    if (evaluate->parsed()) {
      harness::Source source = harness::Source::truth;
      if (ev_source == "estimate") source = harness::Source::estimate;
      else if (ev_source == "facs") source = harness::Source::facs;
      else if (ev_source != "truth")
        throw std::runtime_error("--source must be truth|estimate|facs");

      std::vector<harness::ScenarioTrace> traces;
      for (const auto& path : ev_traces)
        traces.push_back(harness::read_trace_csv(path));
      print_stats(harness::replicate_stats(traces, source));

      if (!ev_versus.empty()) {
        std::vector<harness::ScenarioTrace> versus;
        for (const auto& path : ev_versus)
          versus.push_back(harness::read_trace_csv(path));
        std::printf("\n-- versus --\n");
        print_stats(harness::replicate_stats(versus, source));
        std::printf("\npaired t-tests (segment 0):\n");
        for (auto signal : {harness::Signal::ratio, harness::Signal::od,
                            harness::Signal::x2r}) {
          const double p_settle = harness::paired_metric_pvalue(
              traces, versus, signal, 0, true, source);
          const double p_err = harness::paired_metric_pvalue(
              traces, versus, signal, 0, false, source);
          std::printf("%-6s settling p=%.3f  nrmse p=%.3f\n",
                      signal_name(signal), p_settle, p_err);
        }
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
