#pragma once

#include "smarttmle/inference.hpp"
#include "smarttmle/simulator.hpp"
#include "smarttmle/tmle.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace smarttmle::cli {

/// Everything a run needs, loadable from one JSON document. Flags are
/// overrides of the same keys (flat dotted paths).
struct RunConfig {
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  Scalar alpha = 0.05;

  // estimator options
  bool use_superlearner = true;
  bool include_hal = true;
  int sl_folds = 5;
  Scalar delta_g = 0.01;
  Scalar clamp_delta = 0.005;

  // simulate
  SimParams sim;

  // estimate
  std::string dataset_path;
  std::vector<std::string> regimes = {"I", "II", "IIA", "III", "IIIA"};
  std::vector<std::string> contrasts = {"II-I", "III-I", "IIA-I", "IIIA-I", "II-IIA", "III-IIIA"};

  // power
  std::vector<Scalar> grid_gamma1 = {0.0};
  std::vector<Scalar> grid_gamma2 = {0.0};
  std::vector<Scalar> grid_gamma3 = {0.0};
  std::vector<Scalar> grid_alpha0 = {-4.06};
  std::vector<Index> grid_n = {250};
  int reps = 500;
  Index truth_mc_n = 200000;
  int threads = 0;

  TmleConfig estimator_config() const;
};

RunConfig load_config(const std::string& path);
/// Applies one `key=value` override with a flat dotted key (e.g. "sim.n=500").
void apply_override(RunConfig& config, const std::string& key, const std::string& value);
std::string config_to_json(const RunConfig& config);

/// Atomic write: temp file in the target directory, then rename.
void write_file_atomic(const std::string& path, const std::string& contents);

int cmd_simulate(const RunConfig& config);
int cmd_estimate(const RunConfig& config);
int cmd_power(const RunConfig& config);

/// Hand-emitted power-curve SVG: power vs true effect, one polyline per
/// sample size, dotted references at 0.05 and 0.80.
std::string power_curve_svg(const std::vector<PowerCell>& cells, const Contrast& contrast);

std::string tmle_report_json(const TmleFit& fit, const RegimeSummary& summary);

}  // namespace smarttmle::cli
