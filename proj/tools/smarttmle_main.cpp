#include "smarttmle/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

int main(int argc, char** argv) {
  CLI::App app{"TMLE estimation and power simulation for sequentially randomized trials"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false, out_set = false, alpha_set = false, reps_set = false;
  double alpha = 0.05;
  int reps = 0;
  bool no_superlearner = false;
  std::string dataset;

  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", overrides, "config override as key=value (dotted keys)");
  app.add_option("--out", out_dir, "output directory")->each([&](const std::string&) {
    out_set = true;
  });
  app.add_option("--seed", seed, "master seed")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_option("--alpha", alpha, "two-sided test level")->each([&](const std::string&) {
    alpha_set = true;
  });
  app.add_option("--reps", reps, "replications per power cell")->each([&](const std::string&) {
    reps_set = true;
  });
  app.add_flag("--no-superlearner", no_superlearner, "GLM-only initial fits");
  app.add_option("--dataset", dataset, "dataset CSV path (estimate)");

  auto* sim = app.add_subcommand("simulate", "write one simulated trial dataset");
  auto* est = app.add_subcommand("estimate", "TMLE fits and contrasts for a dataset");
  auto* pow = app.add_subcommand("power", "run the power study over a parameter grid");

  CLI11_PARSE(app, argc, argv);

  try {
    smarttmle::cli::RunConfig config = smarttmle::cli::load_config(config_path);
    if (out_set) config.out_dir = out_dir;
    if (seed_set) config.seed = seed;
    if (alpha_set) config.alpha = alpha;
    if (reps_set) config.reps = reps;
    if (no_superlearner) config.use_superlearner = false;
    if (!dataset.empty()) config.dataset_path = dataset;
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::cerr << "--set expects key=value, got: " << kv << "\n";
        return 2;
      }
      smarttmle::cli::apply_override(config, kv.substr(0, eq), kv.substr(eq + 1));
    }

    if (sim->parsed()) return smarttmle::cli::cmd_simulate(config);
    if (est->parsed()) return smarttmle::cli::cmd_estimate(config);
    if (pow->parsed()) return smarttmle::cli::cmd_power(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
