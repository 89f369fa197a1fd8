#include "smarttmle/cli.hpp"

#include "smarttmle/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace smarttmle::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kArtifactVersion = "0.1.0";

json sim_to_json(const SimParams& p) {
  return json{{"n", p.n},
              {"gamma0", p.gamma0},
              {"gamma1", p.gamma1},
              {"gamma2", p.gamma2},
              {"gamma3", p.gamma3},
              {"gamma_w", p.gamma_w},
              {"alpha0", p.alpha0},
              {"alpha_w", p.alpha_w},
              {"alpha_y", p.alpha_y},
              {"step_up_prob", p.step_up_prob}};
}

void sim_from_json(const json& j, SimParams& p) {
  p.n = j.value("n", p.n);
  p.gamma0 = j.value("gamma0", p.gamma0);
  p.gamma1 = j.value("gamma1", p.gamma1);
  p.gamma2 = j.value("gamma2", p.gamma2);
  p.gamma3 = j.value("gamma3", p.gamma3);
  p.gamma_w = j.value("gamma_w", p.gamma_w);
  p.alpha0 = j.value("alpha0", p.alpha0);
  p.alpha_w = j.value("alpha_w", p.alpha_w);
  p.alpha_y = j.value("alpha_y", p.alpha_y);
  p.step_up_prob = j.value("step_up_prob", p.step_up_prob);
}

json config_json(const RunConfig& c) {
  json j;
  j["out"] = c.out_dir;
  j["seed"] = c.seed;
  j["alpha"] = c.alpha;
  j["use_superlearner"] = c.use_superlearner;
  j["include_hal"] = c.include_hal;
  j["sl_folds"] = c.sl_folds;
  j["delta_g"] = c.delta_g;
  j["clamp_delta"] = c.clamp_delta;
  j["sim"] = sim_to_json(c.sim);
  j["dataset"] = c.dataset_path;
  j["regimes"] = c.regimes;
  j["contrasts"] = c.contrasts;
  j["grid"] = json{{"gamma1", c.grid_gamma1}, {"gamma2", c.grid_gamma2},
                   {"gamma3", c.grid_gamma3}, {"alpha0", c.grid_alpha0},
                   {"n", c.grid_n}};
  j["reps"] = c.reps;
  j["truth_mc_n"] = c.truth_mc_n;
  j["threads"] = c.threads;
  return j;
}

void config_from_json(const json& j, RunConfig& c) {
  c.out_dir = j.value("out", c.out_dir);
  c.seed = j.value("seed", c.seed);
  c.alpha = j.value("alpha", c.alpha);
  c.use_superlearner = j.value("use_superlearner", c.use_superlearner);
  c.include_hal = j.value("include_hal", c.include_hal);
  c.sl_folds = j.value("sl_folds", c.sl_folds);
  c.delta_g = j.value("delta_g", c.delta_g);
  c.clamp_delta = j.value("clamp_delta", c.clamp_delta);
  if (j.contains("sim")) sim_from_json(j.at("sim"), c.sim);
  c.dataset_path = j.value("dataset", c.dataset_path);
  if (j.contains("regimes")) c.regimes = j.at("regimes").get<std::vector<std::string>>();
  if (j.contains("contrasts")) c.contrasts = j.at("contrasts").get<std::vector<std::string>>();
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    if (g.contains("gamma1")) c.grid_gamma1 = g.at("gamma1").get<std::vector<Scalar>>();
    if (g.contains("gamma2")) c.grid_gamma2 = g.at("gamma2").get<std::vector<Scalar>>();
    if (g.contains("gamma3")) c.grid_gamma3 = g.at("gamma3").get<std::vector<Scalar>>();
    if (g.contains("alpha0")) c.grid_alpha0 = g.at("alpha0").get<std::vector<Scalar>>();
    if (g.contains("n")) c.grid_n = g.at("n").get<std::vector<Index>>();
  }
  c.reps = j.value("reps", c.reps);
  c.truth_mc_n = j.value("truth_mc_n", c.truth_mc_n);
  c.threads = j.value("threads", c.threads);
}

json method_notes() {
  // Interpretation decisions surfaced with every output.
  return json{
      {"dgp_min_max_reading",
       "conditional mean uses max(Y_{t-1}, 1/5); treatment index is A_{min(t-1,1)}"},
      {"step_up_probability", "0.5 unless overridden; equal re-randomization"},
      {"variance", "empirical second moment of the summed influence components"},
      {"hal", "zero-order splines, degree 2, 50-point lambda path over 4 decades, "
              "basis cap 2000 by largest variance"},
  };
}

json meta_record(const RunConfig& config) {
  return json{{"artifact_version", kArtifactVersion},
              {"config", config_json(config)},
              {"notes", method_notes()}};
}

Contrast parse_contrast(const std::string& label) {
  const auto dash = label.find('-');
  if (dash == std::string::npos) {
    throw std::invalid_argument("contrast must look like 'II-I': " + label);
  }
  return make_contrast(Regime::from_string(label.substr(0, dash)).label,
                       Regime::from_string(label.substr(dash + 1)).label);
}

std::string format_scalar(Scalar v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

TmleConfig RunConfig::estimator_config() const {
  TmleConfig cfg;
  cfg.initial_fit = use_superlearner ? InitialFitKind::SuperLearner : InitialFitKind::PoissonGlm;
  cfg.include_hal = include_hal;
  cfg.sl_folds = sl_folds;
  cfg.seed = seed;
  cfg.delta_g = delta_g;
  cfg.clamp_delta = clamp_delta;
  return cfg;
}

RunConfig load_config(const std::string& path) {
  RunConfig config;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json j;
    in >> j;
    config_from_json(j, config);
  }
  if (const char* env = std::getenv("SMARTTMLE_OUT"); env != nullptr && *env != '\0') {
    config.out_dir = env;
  }
  return config;
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
  json j = config_json(config);
  std::string pointer = "/" + key;
  std::replace(pointer.begin(), pointer.end(), '.', '/');
  json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded()) parsed = value;  // plain strings pass through
  j[json::json_pointer(pointer)] = parsed;
  config_from_json(j, config);
}

std::string config_to_json(const RunConfig& config) { return config_json(config).dump(2); }

void write_file_atomic(const std::string& path, const std::string& contents) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
  }
  fs::rename(tmp, target);
}

std::string tmle_report_json(const TmleFit& fit, const RegimeSummary& summary) {
  json j;
  j["regime"] = summary.regime;
  j["psi"] = fit.psi;
  j["standard_error"] = summary.standard_error;
  j["ci_lower"] = summary.ci_lower;
  j["ci_upper"] = summary.ci_upper;
  j["epsilon"] = {fit.stage[0].epsilon, fit.stage[1].epsilon, fit.stage[2].epsilon};
  j["eq_residuals"] = {fit.stage[0].eq_residual, fit.stage[1].eq_residual,
                       fit.stage[2].eq_residual};
  j["scales"] = {fit.stage[0].scale, fit.stage[1].scale, fit.stage[2].scale};
  j["min_propensity"] = fit.min_propensity;
  j["max_clever_covariate"] = fit.max_h;
  j["truncation_count"] = fit.truncation_count;
  j["initial_fit"] = fit.stage[2].initial ? fit.stage[2].initial->describe() : "";
  j["n"] = fit.n;
  return j.dump(2);
}

int cmd_simulate(const RunConfig& config) {
  SimParams params = config.sim;
  params.seed = config.seed;
  const TrialDataset data = simulate_trial(params, config.seed);

  std::ostringstream csv;
  serialize_dataset(data, csv);
  const fs::path dir(config.out_dir);
  write_file_atomic((dir / "dataset.csv").string(), csv.str());

  json meta = meta_record(config);
  meta["command"] = "simulate";
  meta["rows"] = data.n();
  write_file_atomic((dir / "dataset.meta.json").string(), meta.dump(2));
  return 0;
}

int cmd_estimate(const RunConfig& config) {
  if (config.dataset_path.empty()) {
    std::cerr << "estimate: no dataset path configured\n";
    return 2;
  }
  const TrialDataset data = parse_dataset_file(config.dataset_path);
  const TmleConfig est = config.estimator_config();

  auto propensity =
      std::make_shared<const PropensityFits>(fit_propensities(data, est.delta_g));

  std::map<std::string, TmleFit> fits;
  bool any_failed = false;
  json report;
  report["regimes"] = json::array();
  for (const auto& name : config.regimes) {
    try {
      const Regime regime = Regime::from_string(name);
      TmleFit fit = estimate_regime_mean(data, regime, est, propensity);
      const RegimeSummary summary = regime_summary(fit, config.alpha);
      report["regimes"].push_back(json::parse(tmle_report_json(fit, summary)));
      fits.emplace(regime.name(), std::move(fit));
    } catch (const std::exception& e) {
      any_failed = true;
      report["regimes"].push_back(json{{"regime", name}, {"error", e.what()}});
      std::cerr << "estimate: regime " << name << " failed: " << e.what() << "\n";
    }
  }

  std::ostringstream csv;
  csv << "contrast,estimate,std_error,z,p_value,ci_lower,ci_upper,reject\n";
  for (const auto& label : config.contrasts) {
    const Contrast c = parse_contrast(label);
    const auto f1 = fits.find(Regime::from_label(c.first).name());
    const auto f2 = fits.find(Regime::from_label(c.second).name());
    if (f1 == fits.end() || f2 == fits.end()) {
      any_failed = true;
      std::cerr << "estimate: contrast " << label << " skipped (missing regime fit)\n";
      continue;
    }
    const ContrastResult r = contrast_test(f1->second, f2->second, config.alpha);
    csv << c.label << ',' << format_scalar(r.estimate) << ',' << format_scalar(r.standard_error)
        << ',' << format_scalar(r.z) << ',' << format_scalar(r.p_value) << ','
        << format_scalar(r.ci_lower) << ',' << format_scalar(r.ci_upper) << ','
        << (r.reject ? 1 : 0) << '\n';
  }

  const fs::path dir(config.out_dir);
  json meta = meta_record(config);
  meta["command"] = "estimate";
  report["meta"] = meta;
  write_file_atomic((dir / "estimates.json").string(), report.dump(2));
  write_file_atomic((dir / "contrasts.csv").string(), csv.str());
  return any_failed ? 1 : 0;
}

std::string power_curve_svg(const std::vector<PowerCell>& cells, const Contrast& contrast) {
  // Fixed 800x600 canvas, margins for axes and legend.
  const Scalar x0 = 90, x1 = 700, y0 = 520, y1 = 60;
  std::vector<const PowerCell*> mine;
  bool any_flagged = false;
  for (const auto& c : cells) {
    if (c.contrast.label == contrast.label) {
      mine.push_back(&c);
      any_flagged = any_flagged || c.flagged;
    }
  }
  Scalar min_eff = 0.0, max_eff = 0.0;
  for (const auto* c : mine) {
    min_eff = std::min(min_eff, c->true_effect);
    max_eff = std::max(max_eff, c->true_effect);
  }
  if (max_eff - min_eff < 1e-9) {
    min_eff -= 0.5;
    max_eff += 0.5;
  }
  const auto sx = [&](Scalar e) { return x0 + (e - min_eff) / (max_eff - min_eff) * (x1 - x0); };
  const auto sy = [&](Scalar p) { return y0 + p * (y1 - y0); };

  std::vector<Index> sizes;
  for (const auto* c : mine) {
    if (std::find(sizes.begin(), sizes.end(), c->params.n) == sizes.end()) {
      sizes.push_back(c->params.n);
    }
  }
  std::sort(sizes.begin(), sizes.end());
  const char* palette[] = {"#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#d35400", "#16a085"};

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' viewBox='0 0 800 600'>\n";
  svg << "<rect width='800' height='600' fill='white'/>\n";
  svg << "<text x='400' y='30' text-anchor='middle' font-size='20'>Rejection probability, "
      << contrast.label << "</text>\n";
  if (any_flagged) {
    svg << "<text x='400' y='50' text-anchor='middle' font-size='12' fill='#c0392b'>"
        << "warning: some cells exceeded the 2% replication-failure threshold</text>\n";
  }
  // Axes.
  svg << "<line x1='" << x0 << "' y1='" << y0 << "' x2='" << x1 << "' y2='" << y0
      << "' stroke='black'/>\n";
  svg << "<line x1='" << x0 << "' y1='" << y0 << "' x2='" << x0 << "' y2='" << y1
      << "' stroke='black'/>\n";
  svg << "<text x='" << (x0 + x1) / 2 << "' y='570' text-anchor='middle' font-size='14'>"
      << "True effect (difference in mean cumulative outcome)</text>\n";
  svg << "<text x='25' y='" << (y0 + y1) / 2
      << "' text-anchor='middle' font-size='14' transform='rotate(-90 25 " << (y0 + y1) / 2
      << ")'>Probability of rejecting H0</text>\n";
  for (int t = 0; t <= 5; ++t) {
    const Scalar p = t / 5.0;
    svg << "<line x1='" << x0 - 5 << "' y1='" << sy(p) << "' x2='" << x0 << "' y2='" << sy(p)
        << "' stroke='black'/>\n";
    svg << "<text x='" << x0 - 10 << "' y='" << sy(p) + 4
        << "' text-anchor='end' font-size='12'>" << p << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const Scalar e = min_eff + (max_eff - min_eff) * t / 4.0;
    svg << "<line x1='" << sx(e) << "' y1='" << y0 << "' x2='" << sx(e) << "' y2='" << y0 + 5
        << "' stroke='black'/>\n";
    char label[32];
    std::snprintf(label, sizeof(label), "%.2f", e);
    svg << "<text x='" << sx(e) << "' y='" << y0 + 20 << "' text-anchor='middle' font-size='12'>"
        << label << "</text>\n";
  }
  // Reference lines at the nominal level and the 80% power target.
  for (const Scalar ref : {0.05, 0.80}) {
    svg << "<line x1='" << x0 << "' y1='" << sy(ref) << "' x2='" << x1 << "' y2='" << sy(ref)
        << "' stroke='gray' stroke-dasharray='4 4'/>\n";
  }

  int color = 0;
  for (const Index n : sizes) {
    std::vector<const PowerCell*> line;
    for (const auto* c : mine) {
      if (c->params.n == n) line.push_back(c);
    }
    std::sort(line.begin(), line.end(), [](const PowerCell* a, const PowerCell* b) {
      return a->true_effect < b->true_effect;
    });
    svg << "<polyline fill='none' stroke='" << palette[color % 6] << "' stroke-width='2' points='";
    for (const auto* c : line) svg << sx(c->true_effect) << ',' << sy(c->power) << ' ';
    svg << "'/>\n";
    svg << "<line x1='" << x1 + 10 << "' y1='" << y1 + 20 * color << "' x2='" << x1 + 30
        << "' y2='" << y1 + 20 * color << "' stroke='" << palette[color % 6]
        << "' stroke-width='2'/>\n";
    svg << "<text x='" << x1 + 35 << "' y='" << y1 + 20 * color + 4 << "' font-size='12'>n="
        << n << "</text>\n";
    ++color;
  }
  svg << "</svg>\n";
  return svg.str();
}

int cmd_power(const RunConfig& config) {
  std::vector<SimParams> grid;
  for (const Scalar g1 : config.grid_gamma1) {
    for (const Scalar g2 : config.grid_gamma2) {
      for (const Scalar g3 : config.grid_gamma3) {
        for (const Scalar a0 : config.grid_alpha0) {
          for (const Index n : config.grid_n) {
            SimParams p = config.sim;
            p.gamma1 = g1;
            p.gamma2 = g2;
            p.gamma3 = g3;
            p.alpha0 = a0;
            p.n = n;
            grid.push_back(p);
          }
        }
      }
    }
  }
  std::vector<Contrast> contrasts;
  for (const auto& label : config.contrasts) contrasts.push_back(parse_contrast(label));

  PowerStudyConfig study;
  study.reps = config.reps;
  study.alpha = config.alpha;
  study.truth_mc_n = config.truth_mc_n;
  study.master_seed = config.seed;
  study.estimator = config.estimator_config();
  study.threads = config.threads;

  const std::vector<PowerCell> cells = run_power_study(grid, contrasts, study);

  std::ostringstream csv;
  csv << kPowerCsvHeader << '\n';
  for (const auto& cell : cells) csv << power_cell_csv_row(cell) << '\n';

  const fs::path dir(config.out_dir);
  write_file_atomic((dir / "power.csv").string(), csv.str());
  for (const auto& c : contrasts) {
    write_file_atomic((dir / ("power_" + c.label + ".svg")).string(), power_curve_svg(cells, c));
  }
  json meta = meta_record(config);
  meta["command"] = "power";
  meta["cells"] = cells.size();
  bool any_flagged = false;
  for (const auto& cell : cells) any_flagged = any_flagged || cell.flagged;
  meta["flagged_cells"] = any_flagged;
  write_file_atomic((dir / "power.meta.json").string(), meta.dump(2));
  return 0;
}

}  // namespace smarttmle::cli
