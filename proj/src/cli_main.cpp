// Command-line front end: simulate / fit / bootstrap / trajectory / benchmark.
// Every command is a pure function of (inputs, config, seed): identical
// invocations rewrite byte-identical outputs, and no command mutates its
// inputs. Exit codes: 0 success, 1 error, 2 ran-but-did-not-converge.
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "cpcure/data_model.hpp"
#include "cpcure/inference.hpp"
#include "cpcure/io.hpp"
#include "cpcure/mcem.hpp"
#include "cpcure/rng.hpp"
#include "cpcure/simulation.hpp"
#include "cpcure/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cpcure::cli {
namespace {

// ---------------------------------------------------------------- plumbing

json versions_json() {
  json v;
  v["cpcure"] = kVersion;
  v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
               "." + std::to_string(EIGEN_MINOR_VERSION);
  v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  v["cli11"] = CLI11_VERSION;
  return v;
}

// The manifest records what determines the outputs: inputs, resolved config,
// seed, and versions. Execution resources (--threads) and the output
// location are deliberately excluded so reruns that differ only in those
// stay byte-identical.
void write_manifest(const std::string& out_dir, const std::string& command, json inputs,
                    json config, std::uint64_t seed, std::vector<std::string> warnings = {}) {
  json m;
  m["schema"] = "cpcure-run/1";
  m["command"] = command;
  m["inputs"] = std::move(inputs);
  m["config"] = std::move(config);
  m["seed"] = seed;
  m["versions"] = versions_json();
  m["warnings"] = std::move(warnings);
  write_text_file((fs::path(out_dir) / "run.json").string(), m.dump(2) + "\n");
}

json fit_config_echo(const FitConfig& c) {
  json j = fit_config_to_json(c);
  j.erase("threads");
  return j;
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail("cannot create output directory '" + out + "': " + ec.message());
}

json load_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail("cannot parse JSON file '" + path + "': " + e.what());
  }
}

void require_known_keys(const json& j, std::initializer_list<const char*> allowed,
                        const std::string& where) {
  if (!j.is_object()) fail(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) fail(where + ": unknown field '" + it.key() + "'");
  }
}

// "start,stop,step" -> {start, start+step, ...} up to stop inclusive (with a
// half-step tolerance for the endpoint). Values computed as start + k*step so
// a rerun reproduces the grid exactly.
std::vector<double> parse_grid(const std::string& spec) {
  double start = 0, stop = 0, step = 0;
  char tail = 0;
  if (std::sscanf(spec.c_str(), "%lf,%lf,%lf%c", &start, &stop, &step, &tail) != 3)
    fail("--grid expects 'start,stop,step', got '" + spec + "'");
  if (!(start > 0.0)) fail("--grid start must be positive");
  if (!(step > 0.0)) fail("--grid step must be positive");
  if (!(stop >= start)) fail("--grid stop must be at least start");
  std::vector<double> grid;
  for (int k = 0;; ++k) {
    const double t = start + k * step;
    if (t > stop + 0.5 * step) break;
    grid.push_back(t);
  }
  return grid;
}

Eigen::Vector4d parse_mu_r(const std::string& spec) {
  double a = 0, b = 0, c = 0, d = 0;
  char tail = 0;
  if (std::sscanf(spec.c_str(), "%lf,%lf,%lf,%lf%c", &a, &b, &c, &d, &tail) != 4)
    fail("--mu-r expects four comma-separated values, got '" + spec + "'");
  return Eigen::Vector4d(a, b, c, d);
}

constexpr double kDaysPerYear = 365.25;

// ---------------------------------------------------------------- commands

struct CommonArgs {
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;  // 0: library default below
  bool quiet = false;
};

int default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

struct FitArgs {
  std::string long_path, events_path, config_path;
  bool days = false;
  bool baseline = false;
};

struct LoadedFit {
  StudyDataset data;
  FitConfig config;
};

LoadedFit load_fit_inputs(const FitArgs& a, const CommonArgs& common) {
  ColumnSchema schema;
  FitConfig fc;
  if (!a.config_path.empty()) {
    json cfg = load_json_file(a.config_path);
    if (cfg.is_object() && cfg.contains("schema")) {
      schema = schema_from_json(cfg.at("schema"));
      cfg.erase("schema");
    }
    fc = fit_config_from_json(cfg);
  }
  if (common.seed_given) fc.seed = common.seed;
  fc.threads = common.threads > 0 ? common.threads : default_threads();
  if (a.baseline) fc.baseline_mode = true;
  LoadedFit out;
  out.config = fc;
  out.data = ingest_dataset(a.long_path, a.events_path, schema, a.days);
  return out;
}

json fit_inputs_echo(const FitArgs& a) {
  json j;
  j["long"] = a.long_path;
  j["events"] = a.events_path;
  j["config"] = a.config_path.empty() ? json(nullptr) : json(a.config_path);
  j["days"] = a.days;
  return j;
}

json fit_file_json(const FitResult& res, const StudyDataset& data, bool baseline_mode) {
  json fj = fit_result_to_json(res);
  fj["schema"] = "cpcure-fit/1";
  fj["baseline_mode"] = baseline_mode;
  fj["design_means"] = design_means_to_json(design_means(data));
  return fj;
}

int cmd_fit(const FitArgs& args, const CommonArgs& common) {
  ensure_out_dir(common.out);
  LoadedFit in = load_fit_inputs(args, common);
  const FitResult res = fit(in.data, in.config);
  write_text_file((fs::path(common.out) / "fit.json").string(),
                  fit_file_json(res, in.data, in.config.baseline_mode).dump(2) + "\n");
  write_manifest(common.out, "fit", fit_inputs_echo(args), fit_config_echo(in.config),
                 in.config.seed, res.diagnostics.warnings);
  if (!common.quiet) {
    std::fprintf(stderr, "fit: %s after %d iterations\n",
                 res.converged ? "converged" : "did not converge", res.iterations_used);
    for (const auto& w : res.diagnostics.warnings) std::fprintf(stderr, "fit: %s\n", w.c_str());
  }
  return res.converged ? 0 : 2;
}

int cmd_bootstrap(const FitArgs& args, const CommonArgs& common, int B) {
  ensure_out_dir(common.out);
  LoadedFit in = load_fit_inputs(args, common);
  const FitResult point = fit(in.data, in.config);
  FitConfig replicate_config = in.config;
  if (!replicate_config.warm_start.has_value()) replicate_config.warm_start = point.params;
  const BootstrapResult boot = bootstrap(in.data, replicate_config, B);

  json bj = bootstrap_result_to_json(boot);
  bj["schema"] = "cpcure-bootstrap/1";
  bj["B"] = B;
  bj["fit"] = fit_file_json(point, in.data, in.config.baseline_mode);
  write_text_file((fs::path(common.out) / "bootstrap.json").string(), bj.dump(2) + "\n");

  json config = fit_config_echo(in.config);
  config["B"] = B;
  std::vector<std::string> warnings = point.diagnostics.warnings;
  warnings.insert(warnings.end(), boot.warnings.begin(), boot.warnings.end());
  write_manifest(common.out, "bootstrap", fit_inputs_echo(args), config, in.config.seed,
                 warnings);
  if (!common.quiet) {
    std::fprintf(stderr, "bootstrap: %d replicates, %d failed\n", B, boot.failures);
    for (const auto& w : warnings) std::fprintf(stderr, "bootstrap: %s\n", w.c_str());
  }
  return point.converged ? 0 : 2;
}

int cmd_simulate(const std::string& config_path, int n_override, int replication,
                 const CommonArgs& common) {
  ensure_out_dir(common.out);
  SimConfig sc;
  if (!config_path.empty())
    sc = sim_config_from_json(load_json_file(config_path));
  else
    sc.truth = default_benchmark_truth();
  if (common.seed_given) sc.seed = common.seed;
  if (n_override > 0) sc.n = n_override;
  sc.validate();
  if (replication < 0) fail("--replication must be non-negative");

  const SimulatedCohort cohort = generate_dataset(sc, replication);
  const fs::path out(common.out);
  write_dataset_csv(cohort.data, (out / "long.csv").string(), (out / "events.csv").string());

  // Latent truth bookkeeping, one row per subject.
  std::string labels =
      "subject_id,group,progression_time,omega,b0,b1_pre,b2_post,stable_b0,stable_b1\n";
  for (std::size_t i = 0; i < cohort.data.subjects.size(); ++i) {
    const bool stable = cohort.labels[i] == GroupLabel::kStable;
    labels += cohort.data.subjects[i].id;
    labels += stable ? ",stable," : ",changepoint,";
    labels += format_double(cohort.progression_time[i]);
    for (int k = 0; k < 4; ++k) labels += "," + format_double(cohort.re[i](k));
    for (int k = 0; k < 2; ++k) labels += "," + format_double(cohort.stable_re[i](k));
    labels += "\n";
  }
  write_text_file((out / "labels.csv").string(), labels);

  json inputs;
  inputs["config"] = config_path.empty() ? json(nullptr) : json(config_path);
  json config = sim_config_to_json(sc);
  config["replication"] = replication;
  write_manifest(common.out, "simulate", inputs, config, sc.seed);
  if (!common.quiet)
    std::fprintf(stderr, "simulate: %d subjects (%ld regenerated)\n", sc.n, cohort.regenerated);
  return 0;
}

// ------------------------------------------------------------- trajectory

struct ArmFile {
  std::string name;
  ModelParameters params;
  DesignMeans means;
  bool converged = true;
  std::optional<BootstrapResult> boot;
};

ArmFile load_arm(const std::string& path) {
  const json j = load_json_file(path);
  ArmFile arm;
  arm.name = fs::path(path).stem().string();
  const bool is_bootstrap = j.contains("replicates");
  const json& fit_block = is_bootstrap ? j.at("fit") : j;
  const FitResult fr = fit_result_from_json(fit_block);
  arm.params = fr.params;
  arm.converged = fr.converged;
  if (!fit_block.contains("design_means"))
    fail("result file '" + path + "' lacks design_means; was it produced by fit or bootstrap?");
  arm.means = design_means_from_json(fit_block.at("design_means"));
  if (is_bootstrap) arm.boot = bootstrap_result_from_json(j);
  return arm;
}

void append_time_cells(std::string& row, double t, bool days) {
  row += format_double(t);
  if (days) row += "," + format_double(t * kDaysPerYear);
}

int cmd_trajectory(const std::vector<std::string>& result_paths, const std::string& grid_spec,
                   int draws, bool days, const CommonArgs& common) {
  ensure_out_dir(common.out);
  if (result_paths.empty() || result_paths.size() > 2)
    fail("trajectory expects one or two result files (one per arm)");
  const std::vector<double> grid = parse_grid(grid_spec);
  if (draws < 1) fail("--draws must be at least 1");

  std::vector<ArmFile> arms;
  for (const std::string& p : result_paths) arms.push_back(load_arm(p));
  if (arms.size() == 2 && arms[1].name == arms[0].name) arms[1].name += "_2";
  const bool with_bands = arms.front().boot.has_value();
  for (const ArmFile& a : arms)
    if (a.boot.has_value() != with_bands)
      fail("mixed inputs: intervals need bootstrap result files for every arm, "
           "or plain fit files for every arm");

  std::vector<std::string> warnings;
  const std::size_t g = grid.size();
  std::vector<TrajectoryEstimate> curves;
  std::vector<std::vector<std::vector<double>>> replicate_curves;
  for (const ArmFile& arm : arms) {
    if (!arm.converged)
      warnings.push_back("arm '" + arm.name + "': fit had not converged");
    const std::uint64_t salt = mix64(fnv1a64(arm.name));
    TrajectoryEstimate est =
        marginal_trajectory(arm.params, arm.means, grid, draws, common.seed, salt);
    if (with_bands) {
      const auto reps = replicate_trajectories(*arm.boot, grid, draws, common.seed,
                                               mix64(salt ^ stream_purpose::kTrajectory));
      est.ci_lower.resize(g);
      est.ci_upper.resize(g);
      for (std::size_t k = 0; k < g; ++k) {
        std::vector<double> values;
        for (const auto& curve : reps)
          if (!curve.empty()) values.push_back(curve[k]);
        if (values.empty()) fail("arm '" + arm.name + "': no usable bootstrap replicate");
        const auto bounds = percentile_bounds(values);
        est.ci_lower[k] = bounds.first;
        est.ci_upper[k] = bounds.second;
      }
      replicate_curves.push_back(reps);
    }
    curves.push_back(std::move(est));
  }

  // trajectory.csv: one block per arm, grid-ascending within the block.
  std::string csv = days ? "time,time_days,arm,mean" : "time,arm,mean";
  csv += with_bands ? ",lo,hi\n" : "\n";
  for (std::size_t a = 0; a < arms.size(); ++a)
    for (std::size_t k = 0; k < g; ++k) {
      std::string row;
      append_time_cells(row, grid[k], days);
      row += "," + arms[a].name + "," + format_double(curves[a].mean[k]);
      if (with_bands)
        row += "," + format_double(curves[a].ci_lower[k]) + "," +
               format_double(curves[a].ci_upper[k]);
      csv += row + "\n";
    }
  write_text_file((fs::path(common.out) / "trajectory.csv").string(), csv);

  // Two arms: treatment-effect curve (first minus second) and landmarks.
  std::optional<double> first_band_separation;
  std::optional<double> first_ate_upper_below_zero;
  if (arms.size() == 2) {
    const std::vector<double> ate = average_treatment_effect(curves[0], curves[1]);
    std::vector<double> ate_lo, ate_hi;
    if (with_bands) {
      std::vector<std::vector<double>> diffs;
      const auto& r0 = replicate_curves[0];
      const auto& r1 = replicate_curves[1];
      for (std::size_t b = 0; b < r0.size() && b < r1.size(); ++b) {
        if (r0[b].empty() || r1[b].empty()) continue;
        std::vector<double> d(g);
        for (std::size_t k = 0; k < g; ++k) d[k] = r0[b][k] - r1[b][k];
        diffs.push_back(std::move(d));
      }
      if (diffs.empty()) fail("no bootstrap replicate is usable in both arms");
      ate_lo.resize(g);
      ate_hi.resize(g);
      for (std::size_t k = 0; k < g; ++k) {
        std::vector<double> values;
        for (const auto& d : diffs) values.push_back(d[k]);
        const auto bounds = percentile_bounds(values);
        ate_lo[k] = bounds.first;
        ate_hi[k] = bounds.second;
      }
      for (std::size_t k = 0; k < g; ++k) {
        if (curves[0].ci_upper[k] < curves[1].ci_lower[k] ||
            curves[1].ci_upper[k] < curves[0].ci_lower[k]) {
          first_band_separation = grid[k];
          break;
        }
      }
      for (std::size_t k = 0; k < g; ++k)
        if (ate_hi[k] < 0.0) {
          first_ate_upper_below_zero = grid[k];
          break;
        }
    }

    std::string ate_csv = days ? "time,time_days,ate" : "time,ate";
    ate_csv += with_bands ? ",lo,hi\n" : "\n";
    for (std::size_t k = 0; k < g; ++k) {
      std::string row;
      append_time_cells(row, grid[k], days);
      row += "," + format_double(ate[k]);
      if (with_bands)
        row += "," + format_double(ate_lo[k]) + "," + format_double(ate_hi[k]);
      ate_csv += row + "\n";
    }
    write_text_file((fs::path(common.out) / "ate.csv").string(), ate_csv);
  }

  json landmarks;
  landmarks["first_band_separation"] =
      first_band_separation ? json(*first_band_separation) : json(nullptr);
  landmarks["first_ate_upper_below_zero"] =
      first_ate_upper_below_zero ? json(*first_ate_upper_below_zero) : json(nullptr);
  if (days) {
    landmarks["first_band_separation_days"] =
        first_band_separation ? json(*first_band_separation * kDaysPerYear) : json(nullptr);
    landmarks["first_ate_upper_below_zero_days"] =
        first_ate_upper_below_zero ? json(*first_ate_upper_below_zero * kDaysPerYear)
                                   : json(nullptr);
  }
  write_text_file((fs::path(common.out) / "landmarks.json").string(),
                  landmarks.dump(2) + "\n");

  json inputs;
  inputs["results"] = result_paths;
  inputs["days"] = days;
  json config;
  config["grid"] = grid;
  config["draws"] = draws;
  config["intervals"] = with_bands;
  write_manifest(common.out, "trajectory", inputs, config, common.seed, warnings);
  if (!common.quiet) {
    std::fprintf(stderr, "trajectory: %zu arm(s), %zu grid points%s\n", arms.size(), g,
                 with_bands ? ", with intervals" : "");
    for (const auto& w : warnings) std::fprintf(stderr, "trajectory: %s\n", w.c_str());
  }
  return 0;
}

// -------------------------------------------------------------- benchmark

int cmd_benchmark(const std::string& config_path, int n, const std::string& pi,
                  const std::string& mu_r, int reps, int B, bool baseline,
                  const CommonArgs& common) {
  ensure_out_dir(common.out);
  SimConfig sim;
  sim.truth = default_benchmark_truth();
  FitConfig fit_config;
  BenchmarkOptions options;
  if (!config_path.empty()) {
    const json cfg = load_json_file(config_path);
    require_known_keys(cfg, {"sim", "fit", "options"}, "benchmark config");
    if (cfg.contains("sim")) sim = sim_config_from_json(cfg.at("sim"));
    if (cfg.contains("fit")) fit_config = fit_config_from_json(cfg.at("fit"));
    if (cfg.contains("options")) {
      const json& o = cfg.at("options");
      require_known_keys(o,
                         {"include_baseline", "bootstrap_reps", "grid",
                          "trajectory_truth_subjects", "trajectory_draws"},
                         "benchmark config.options");
      if (o.contains("include_baseline"))
        options.include_baseline = o.at("include_baseline").get<bool>();
      if (o.contains("bootstrap_reps"))
        options.bootstrap_reps = o.at("bootstrap_reps").get<int>();
      if (o.contains("grid")) options.grid = o.at("grid").get<std::vector<double>>();
      if (o.contains("trajectory_truth_subjects"))
        options.trajectory_truth_subjects = o.at("trajectory_truth_subjects").get<long>();
      if (o.contains("trajectory_draws"))
        options.trajectory_draws = o.at("trajectory_draws").get<int>();
    }
  }
  if (n > 0) sim.n = n;
  if (!pi.empty()) {
    double value = 0;
    char tail = 0;
    if (std::sscanf(pi.c_str(), "%lf%c", &value, &tail) != 1)
      fail("--pi expects a number, got '" + pi + "'");
    sim.truth.stable_rate = value;
  }
  if (!mu_r.empty()) sim.truth.re_mean = parse_mu_r(mu_r);
  if (reps > 0) sim.replications = reps;
  if (common.seed_given) sim.seed = common.seed;
  if (B > 0) options.bootstrap_reps = B;
  if (baseline) options.include_baseline = true;
  fit_config.threads = common.threads > 0 ? common.threads : default_threads();
  sim.validate();

  const BenchmarkReport report = run_benchmark(sim, fit_config, options);

  std::string params_csv = "parameter,truth,bias,mse,coverage";
  if (report.params_baseline)
    params_csv += ",baseline_bias,baseline_mse,baseline_coverage";
  params_csv += "\n";
  for (std::size_t k = 0; k < report.parameter.size(); ++k) {
    params_csv += report.parameter[k] + "," + format_double(report.truth[k]) + "," +
                  format_double(report.params_full.bias[k]) + "," +
                  format_double(report.params_full.mse[k]) + "," +
                  format_double(report.params_full.coverage[k]);
    if (report.params_baseline)
      params_csv += "," + format_double(report.params_baseline->bias[k]) + "," +
                    format_double(report.params_baseline->mse[k]) + "," +
                    format_double(report.params_baseline->coverage[k]);
    params_csv += "\n";
  }
  write_text_file((fs::path(common.out) / "params_metrics.csv").string(), params_csv);

  std::string traj_csv = "time,truth,bias,mse";
  if (report.trajectory_baseline) traj_csv += ",baseline_bias,baseline_mse";
  traj_csv += "\n";
  for (std::size_t k = 0; k < report.grid.size(); ++k) {
    traj_csv += format_double(report.grid[k]) + "," +
                format_double(report.trajectory_truth[k]) + "," +
                format_double(report.trajectory_full.bias[k]) + "," +
                format_double(report.trajectory_full.mse[k]);
    if (report.trajectory_baseline)
      traj_csv += "," + format_double(report.trajectory_baseline->bias[k]) + "," +
                  format_double(report.trajectory_baseline->mse[k]);
    traj_csv += "\n";
  }
  write_text_file((fs::path(common.out) / "trajectory_metrics.csv").string(), traj_csv);

  json inputs;
  inputs["config"] = config_path.empty() ? json(nullptr) : json(config_path);
  json config;
  config["sim"] = sim_config_to_json(sim);
  config["fit"] = fit_config_echo(fit_config);
  config["options"] = {{"include_baseline", options.include_baseline},
                       {"bootstrap_reps", options.bootstrap_reps},
                       {"grid", report.grid},
                       {"trajectory_truth_subjects", options.trajectory_truth_subjects},
                       {"trajectory_draws", options.trajectory_draws}};
  config["replications_used"] = report.replications_used;
  config["failures"] = report.failures;
  config["regenerated"] = report.regenerated;
  std::vector<std::string> warnings = report.warnings;
  write_manifest(common.out, "benchmark", inputs, config, sim.seed, warnings);
  if (!common.quiet) {
    std::fprintf(stderr, "benchmark: %d replications used, %d failed\n",
                 report.replications_used, report.failures);
    for (const auto& w : warnings) std::fprintf(stderr, "benchmark: %s\n", w.c_str());
  }
  return 0;
}

}  // namespace
}  // namespace cpcure::cli

int main(int argc, char** argv) {
  using namespace cpcure;
  using namespace cpcure::cli;

  CLI::App app{"Two-group cure-rate joint model for longitudinal and time-to-event data"};
  app.require_subcommand(1);

  CommonArgs common;
  const auto add_common = [&common](CLI::App* cmd, bool with_seed = true) {
    cmd->add_option("--out", common.out, "Output directory (created if missing)")->required();
    if (with_seed)
      cmd->add_option("--seed", common.seed, "RNG seed")->each([&common](const std::string&) {
        common.seed_given = true;
      });
    cmd->add_option("--threads", common.threads,
                    "Worker threads (default: available parallelism; results do not depend on "
                    "this)");
    cmd->add_flag("--quiet", common.quiet, "Suppress progress notes on stderr");
  };

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic cohort");
  std::string sim_config;
  int sim_n = 0, sim_replication = 0;
  sim_cmd->add_option("--config", sim_config, "Generator config JSON");
  sim_cmd->add_option("--n", sim_n, "Override cohort size");
  sim_cmd->add_option("--replication", sim_replication, "Replication index (default 0)");
  add_common(sim_cmd);

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Fit the mixture model to CSV data");
  FitArgs fit_args;
  fit_cmd->add_option("--long", fit_args.long_path, "Longitudinal CSV")->required();
  fit_cmd->add_option("--events", fit_args.events_path, "Event/censoring CSV")->required();
  fit_cmd->add_option("--config", fit_args.config_path, "Fit config JSON");
  fit_cmd->add_flag("--baseline", fit_args.baseline,
                    "Change-point-only comparator (no stable group)");
  fit_cmd->add_flag("--days", fit_args.days, "Input times are in days; convert to years");
  add_common(fit_cmd);

  // bootstrap
  auto* boot_cmd = app.add_subcommand("bootstrap", "Fit plus percentile bootstrap intervals");
  FitArgs boot_args;
  int boot_B = 100;
  boot_cmd->add_option("--long", boot_args.long_path, "Longitudinal CSV")->required();
  boot_cmd->add_option("--events", boot_args.events_path, "Event/censoring CSV")->required();
  boot_cmd->add_option("--config", boot_args.config_path, "Fit config JSON");
  boot_cmd->add_option("--B", boot_B, "Bootstrap replicates (default 100)");
  boot_cmd->add_flag("--baseline", boot_args.baseline,
                     "Change-point-only comparator (no stable group)");
  boot_cmd->add_flag("--days", boot_args.days, "Input times are in days; convert to years");
  add_common(boot_cmd);

  // trajectory
  auto* traj_cmd =
      app.add_subcommand("trajectory", "Marginal trajectory (and treatment effect) curves");
  std::vector<std::string> traj_results;
  std::string traj_grid = "0.1,2.0,0.1";
  int traj_draws = 100000;
  bool traj_days = false;
  traj_cmd->add_option("results", traj_results, "One or two fit/bootstrap result JSONs")
      ->required()
      ->expected(1, 2);
  traj_cmd->add_option("--grid", traj_grid, "Grid as start,stop,step (default 0.1,2.0,0.1)");
  traj_cmd->add_option("--draws", traj_draws, "Monte Carlo draws per curve (default 100000)");
  traj_cmd->add_flag("--days", traj_days, "Also emit grid times in days");
  add_common(traj_cmd);

  // benchmark
  auto* bench_cmd = app.add_subcommand("benchmark", "Simulation benchmark tables");
  std::string bench_config, bench_pi, bench_mu_r;
  int bench_n = 0, bench_reps = 0, bench_B = 0;
  bool bench_baseline = false;
  bench_cmd->add_option("--config", bench_config, "Benchmark config JSON (sim/fit/options)");
  bench_cmd->add_option("--n", bench_n, "Cohort size per replication");
  bench_cmd->add_option("--pi", bench_pi, "Stable-group fraction");
  bench_cmd->add_option("--mu-r", bench_mu_r,
                        "Change-point random-effect means as omega,b0,b1,b2");
  bench_cmd->add_option("--reps", bench_reps, "Number of replications");
  bench_cmd->add_option("--B", bench_B, "Bootstrap replicates per dataset");
  bench_cmd->add_flag("--baseline", bench_baseline,
                      "Also fit the change-point-only comparator");
  add_common(bench_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim_cmd->parsed()) return cmd_simulate(sim_config, sim_n, sim_replication, common);
    if (fit_cmd->parsed()) return cmd_fit(fit_args, common);
    if (boot_cmd->parsed()) return cmd_bootstrap(boot_args, common, boot_B);
    if (traj_cmd->parsed())
      return cmd_trajectory(traj_results, traj_grid, traj_draws, traj_days, common);
    if (bench_cmd->parsed())
      return cmd_benchmark(bench_config, bench_n, bench_pi, bench_mu_r, bench_reps, bench_B,
                           bench_baseline, common);
  } catch (const cpcure::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return 1;
}
