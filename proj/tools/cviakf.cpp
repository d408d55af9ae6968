#include "cviakf/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace cli = cviakf::cli;

namespace {

void add_tuning_flags(CLI::App& app, std::optional<std::string>& config, cli::ConfigOverrides& o) {
  app.add_option_function<std::string>("--config", [&](const std::string& v) { config = v; },
                                       "key = value file of filter settings");
  app.add_option_function<int>("--samples", [&](int v) { o.samples = v; }, "Monte Carlo sample count S");
  app.add_option_function<double>("--learning-rate", [&](double v) { o.learning_rate = v; }, "mirror step beta");
  app.add_option_function<int>("--max-iters", [&](int v) { o.max_iters = v; }, "iteration cap per update");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational adaptive Kalman filter: scenario benchmarks and tracking"};
  app.require_subcommand(1);

  cli::SimulateOptions sim;
  std::optional<std::string> sim_config;
  std::string sim_out = ".";
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo campaign on a built-in scenario");
  simulate->add_option("--scenario", sim.scenario, "s1, s2, s3 or s4")->required();
  simulate->add_option("--runs", sim.runs, "Monte Carlo runs M")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "master seed")->capture_default_str();
  simulate->add_option("--methods", sim.methods, "comma list of kftcm, kfncm, cviakf")->capture_default_str();
  simulate->add_option("--out", sim_out, "output directory")->capture_default_str();
  simulate->add_option_function<int>("--dump-run", [&](int v) { sim.dump_run = v; },
                                     "also write measurements, truth and tracks of this run");
  simulate->add_option("--workers", sim.workers, "worker threads, 0 = all cores")->capture_default_str();
  add_tuning_flags(*simulate, sim_config, sim.overrides);

  cli::TrackOptions track;
  std::optional<std::string> track_config;
  std::string track_in, track_out = "track.csv";
  auto* track_cmd = app.add_subcommand("track", "Run the filter over a measurement CSV");
  track_cmd->add_option("--measurements", track_in, "CSV with header k,x,y or k,range,azimuth_rad")->required();
  track_cmd->add_option("--model", track.model, "linear or range-azimuth")->capture_default_str();
  track_cmd->add_option_function<std::string>("--x0", [&](const std::string& v) { track.x0 = v; },
                                              "initial state x,vx,y,vy");
  track_cmd->add_option_function<std::string>("--p0", [&](const std::string& v) { track.p0 = v; },
                                              "initial covariance: scalar, 4 diagonal or 16 values");
  track_cmd->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { track.seed = v; },
                                                "filter seed for the Monte Carlo gradient");
  track_cmd->add_option("--out", track_out, "output CSV")->capture_default_str();
  add_tuning_flags(*track_cmd, track_config, track.overrides);

  cli::SelfcheckOptions check;
  auto* selfcheck = app.add_subcommand("selfcheck", "Gradient and positive-definiteness checks");
  selfcheck->add_option("--trials", check.trials, "fuzzed precision steps")->capture_default_str();
  selfcheck->add_option("--states", check.states, "states for the gradient check")->capture_default_str();
  selfcheck->add_option("--seed", check.seed, "seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  if (simulate->parsed()) {
    sim.out = sim_out;
    if (sim_config) sim.config_file = *sim_config;
    return cli::cmd_simulate(sim, std::cout, std::cerr);
  }
  if (track_cmd->parsed()) {
    track.measurements = track_in;
    track.out = track_out;
    if (track_config) track.config_file = *track_config;
    return cli::cmd_track(track, std::cout, std::cerr);
  }
  return cli::cmd_selfcheck(check, std::cout, std::cerr);
}
