#include "cpcure/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "cpcure/distributions.hpp"
#include "cpcure/inference.hpp"
#include "cpcure/mcem.hpp"
#include "cpcure/model_components.hpp"
#include "cpcure/rng.hpp"
#include "cpcure/util.hpp"

namespace cpcure {

ModelParameters default_benchmark_truth() {
  ModelParameters p;
  p.stable_rate = 0.3;
  p.tte_coef = Eigen::VectorXd::Constant(1, 0.2);
  p.tte_sd = 0.5;
  p.re_mean << 0.5, 0.0, -0.5, 0.5;
  p.re_cov =
      Eigen::Vector4d(0.10 * 0.10, 0.04 * 0.04, 0.22 * 0.22, 0.16 * 0.16).asDiagonal();
  p.long_coef = Eigen::VectorXd::Constant(1, 0.1);
  p.long_sd = 0.1;
  p.stable_re_mean << 0.1, -0.05;
  p.stable_re_cov = Eigen::Vector2d(0.08 * 0.08, 0.135 * 0.135).asDiagonal();
  p.stable_long_coef = Eigen::VectorXd::Constant(1, 0.1);
  p.stable_long_sd = 0.12;
  return p;
}

void SimConfig::validate() const {
  truth.validate();
  if (truth.long_coef.size() != 1 || truth.stable_long_coef.size() != 1 ||
      truth.tte_coef.size() != 1)
    fail("SimConfig: generated cohorts use a single standard-normal covariate per design; "
         "truth must have one longitudinal, one stable, and one event-time coefficient");
  if (n < 1) fail("SimConfig: n must be at least 1");
  if (!(censor_rate > 0.0)) fail("SimConfig: censor_rate must be positive");
  if (!(visit_spacing > 0.0)) fail("SimConfig: visit_spacing must be positive");
  if (visit_noise_sd < 0.0) fail("SimConfig: visit_noise_sd must be non-negative");
  if (max_visits < 1) fail("SimConfig: max_visits must be at least 1");
  if (replications < 1) fail("SimConfig: replications must be at least 1");
}

namespace {

constexpr int kMaxAttempts = 1000;

std::string subject_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%05d", index + 1);
  return buf;
}

// One subject attempt; returns false when the draw violates the data
// contract (a visit past follow-up or non-increasing visit times) and must
// be redrawn.
bool try_subject(const SimConfig& cfg, const PtmvnSampler& re_sampler,
                 const Eigen::Matrix2d& stable_chol, int index, Rng& rng, SubjectData& out,
                 GroupLabel& label, double& progression, Eigen::Vector4d& re,
                 Eigen::Vector2d& stable_re) {
  const ModelParameters& p = cfg.truth;

  const double w = rng.normal();
  const double log_t_prog = w * p.tte_coef(0) + p.tte_sd * rng.normal();
  const bool stable = rng.uniform() < p.stable_rate;
  const double t_prog = stable ? std::numeric_limits<double>::infinity() : std::exp(log_t_prog);
  const double censor = rng.exponential(cfg.censor_rate);
  const double t_obs = std::min(t_prog, censor);
  const bool event = t_prog <= censor;

  const double x = rng.normal();

  re.setZero();
  stable_re.setZero();
  if (stable) {
    Eigen::Vector2d u(rng.normal(), rng.normal());
    stable_re = p.stable_re_mean + stable_chol * u;
  } else {
    re = re_sampler.sample(t_prog, rng);
  }

  // Jittered visit schedule; the fixed draw count keeps the stream layout
  // independent of follow-up length.
  std::vector<double> scheduled(cfg.max_visits);
  for (int j = 0; j < cfg.max_visits; ++j) {
    const double z = cfg.visit_noise_sd * std::abs(rng.normal());
    scheduled[j] = std::abs(cfg.visit_spacing * (j + 1) - z);
  }
  int n_vis = 0;
  for (int j = 0; j < cfg.max_visits; ++j)
    if (scheduled[j] <= t_obs) n_vis = j + 1;

  std::vector<double> times;
  if (n_vis == 0) {
    // Follow-up ended before the first scheduled visit: keep one early visit.
    times.push_back(0.1 * scheduled[0]);
  } else {
    times.assign(scheduled.begin(), scheduled.begin() + n_vis);
  }

  for (std::size_t j = 0; j < times.size(); ++j) {
    if (times[j] > t_obs) return false;
    if (j > 0 && !(times[j] > times[j - 1])) return false;
  }

  const int n = static_cast<int>(times.size());
  out.id = subject_name(index);
  out.visit_times = Eigen::Map<const Eigen::VectorXd>(times.data(), n);
  out.y.resize(n);
  out.x_long = Eigen::MatrixXd::Constant(n, 1, x);
  out.x_stable = Eigen::MatrixXd::Constant(n, 1, x);
  out.w_tte = Eigen::VectorXd::Constant(1, w);
  out.event_time = t_obs;
  out.event = event;

  if (stable) {
    for (int j = 0; j < n; ++j)
      out.y(j) = x * p.stable_long_coef(0) + stable_re(0) + stable_re(1) * times[j] +
                 p.stable_long_sd * rng.normal();
  } else {
    const Eigen::MatrixXd z = piecewise_design(out.visit_times, re(0));
    const Eigen::Vector3d b = re.tail<3>();
    for (int j = 0; j < n; ++j)
      out.y(j) = x * p.long_coef(0) + z.row(j).dot(b) + p.long_sd * rng.normal();
  }

  label = stable ? GroupLabel::kStable : GroupLabel::kChangePoint;
  progression = t_prog;
  return true;
}

}  // namespace

SimulatedCohort generate_dataset(const SimConfig& config, int replication) {
  config.validate();
  if (replication < 0) fail("generate_dataset: negative replication index");

  SimulatedCohort cohort;
  cohort.data.subjects.resize(config.n);
  cohort.labels.resize(config.n);
  cohort.progression_time.resize(config.n);
  cohort.re.resize(config.n);
  cohort.stable_re.resize(config.n);

  const PtmvnSampler re_sampler(config.truth.re_mean, config.truth.re_cov);
  const Eigen::Matrix2d stable_chol =
      Eigen::LLT<Eigen::Matrix2d>(config.truth.stable_re_cov).matrixL();

  for (int i = 0; i < config.n; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      Rng rng = Rng::stream(config.seed, stream_purpose::kSimulate,
                            static_cast<std::uint64_t>(replication),
                            (static_cast<std::uint64_t>(i) << 16) |
                                static_cast<std::uint64_t>(attempt));
      if (try_subject(config, re_sampler, stable_chol, i, rng, cohort.data.subjects[i],
                      cohort.labels[i], cohort.progression_time[i], cohort.re[i],
                      cohort.stable_re[i])) {
        ok = true;
        cohort.regenerated += attempt;
        break;
      }
    }
    if (!ok)
      fail("generate_dataset: subject " + subject_name(i) + " failed " +
           std::to_string(kMaxAttempts) + " draws; configuration is degenerate");
  }

  cohort.data.validate();
  return cohort;
}

SimMetrics compute_metrics(const std::vector<std::vector<double>>& estimates,
                           const std::vector<double>& truth,
                           const std::vector<std::vector<double>>* ci_lower,
                           const std::vector<std::vector<double>>* ci_upper) {
  if (estimates.empty()) fail("compute_metrics: no estimates");
  const std::size_t p = truth.size();
  const std::size_t reps = estimates.size();
  for (const auto& row : estimates)
    if (row.size() != p) fail("compute_metrics: estimate width does not match truth");
  if ((ci_lower == nullptr) != (ci_upper == nullptr))
    fail("compute_metrics: interval bounds must be given together");
  if (ci_lower != nullptr) {
    if (ci_lower->size() != reps || ci_upper->size() != reps)
      fail("compute_metrics: interval count does not match estimates");
    for (std::size_t b = 0; b < reps; ++b)
      if ((*ci_lower)[b].size() != p || (*ci_upper)[b].size() != p)
        fail("compute_metrics: interval width does not match truth");
  }

  SimMetrics m;
  m.bias.assign(p, 0.0);
  m.mse.assign(p, 0.0);
  m.coverage.assign(p, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < p; ++k) {
    double sum_err = 0.0, sum_sq = 0.0;
    for (std::size_t b = 0; b < reps; ++b) {
      const double err = estimates[b][k] - truth[k];
      sum_err += err;
      sum_sq += err * err;
    }
    m.bias[k] = std::abs(sum_err) / static_cast<double>(reps);
    m.mse[k] = sum_sq / static_cast<double>(reps);
    if (ci_lower != nullptr) {
      long hits = 0;
      for (std::size_t b = 0; b < reps; ++b)
        if ((*ci_lower)[b][k] <= truth[k] && truth[k] <= (*ci_upper)[b][k]) ++hits;
      m.coverage[k] = static_cast<double>(hits) / static_cast<double>(reps);
    }
  }
  return m;
}

TrajectoryTruth simulate_trajectory_truth(const ModelParameters& truth, const DesignMeans& means,
                                          const std::vector<double>& grid, long subjects,
                                          std::uint64_t seed) {
  truth.validate();
  if (grid.empty()) fail("simulate_trajectory_truth: empty grid");
  if (subjects < 1) fail("simulate_trajectory_truth: need at least one draw");
  if (means.x_long.size() != truth.long_coef.size() ||
      means.x_stable.size() != truth.stable_long_coef.size() ||
      means.w_tte.size() != truth.tte_coef.size())
    fail("simulate_trajectory_truth: design means do not match the parameter dimensions");

  const double cp_fixed = means.x_long.dot(truth.long_coef);
  const double stable_fixed = means.x_stable.dot(truth.stable_long_coef);
  const double log_t_loc = means.w_tte.dot(truth.tte_coef);

  const std::size_t g = grid.size();
  std::vector<double> sum(g, 0.0), sum_sq(g, 0.0);
  const PtmvnSampler re_sampler(truth.re_mean, truth.re_cov);
  const Eigen::Matrix2d stable_chol =
      Eigen::LLT<Eigen::Matrix2d>(truth.stable_re_cov).matrixL();
  Rng rng = Rng::stream(seed, stream_purpose::kSimulate, 0x747275746866756cull);

  for (long m = 0; m < subjects; ++m) {
    const bool stable = rng.uniform() < truth.stable_rate;
    if (stable) {
      Eigen::Vector2d u(rng.normal(), rng.normal());
      const Eigen::Vector2d b = truth.stable_re_mean + stable_chol * u;
      for (std::size_t k = 0; k < g; ++k) {
        const double v = stable_fixed + b(0) + b(1) * grid[k];
        sum[k] += v;
        sum_sq[k] += v * v;
      }
    } else {
      const double log_t = log_t_loc + truth.tte_sd * rng.normal();
      const Eigen::Vector4d r = re_sampler.sample(std::exp(log_t), rng);
      for (std::size_t k = 0; k < g; ++k) {
        const double dt = grid[k] - r(0);
        const double v = cp_fixed + r(1) + (dt <= 0.0 ? r(2) : r(3)) * dt;
        sum[k] += v;
        sum_sq[k] += v * v;
      }
    }
  }

  TrajectoryTruth out;
  out.grid = grid;
  out.mean.resize(g);
  out.mc_se.resize(g);
  const double n = static_cast<double>(subjects);
  for (std::size_t k = 0; k < g; ++k) {
    out.mean[k] = sum[k] / n;
    const double var = std::max(0.0, sum_sq[k] / n - out.mean[k] * out.mean[k]);
    out.mc_se[k] = std::sqrt(var / n);
  }
  return out;
}

namespace {

// One model variant's accumulated benchmark rows.
struct PipelineRows {
  std::vector<std::vector<double>> est, lo, hi;
  std::vector<std::vector<double>> traj, traj_lo, traj_hi;
};

// Fit + bootstrap + trajectory for one replication and one model variant.
// Returns false when the pipeline errored (message appended to warnings).
bool run_pipeline(const SimulatedCohort& cohort, const FitConfig& base_config,
                  bool baseline_mode, int replication, const BenchmarkOptions& options,
                  const std::vector<double>& grid, PipelineRows& rows,
                  std::vector<std::string>& warnings) {
  const char* tag = baseline_mode ? "baseline" : "full";
  FitConfig fc = base_config;
  fc.baseline_mode = baseline_mode;
  fc.stream_salt = mix64(mix64(base_config.stream_salt ^ (baseline_mode ? 0xba5eull : 0xf01ull)) +
                         static_cast<std::uint64_t>(replication));
  try {
    const FitResult f = fit(cohort.data, fc);
    if (!f.converged)
      warnings.push_back("replication " + std::to_string(replication + 1) + " (" + tag +
                         "): fit did not converge");
    FitConfig bc = fc;
    bc.warm_start = f.params;
    const BootstrapResult boot = bootstrap(cohort.data, bc, options.bootstrap_reps);
    for (const auto& w : boot.warnings)
      warnings.push_back("replication " + std::to_string(replication + 1) + " (" + tag +
                         "): " + w);

    rows.est.push_back(flatten(f.params));
    rows.lo.push_back(flatten(boot.ci_lower));
    rows.hi.push_back(flatten(boot.ci_upper));

    const std::uint64_t traj_salt = mix64(fc.stream_salt ^ stream_purpose::kTrajectory);
    rows.traj.push_back(marginal_trajectory(f.params, design_means(cohort.data), grid,
                                            options.trajectory_draws, fc.seed, traj_salt)
                            .mean);
    const auto curves =
        replicate_trajectories(boot, grid, options.trajectory_draws, bc.seed, traj_salt);
    std::vector<double> tlo(grid.size()), thi(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
      std::vector<double> values;
      for (const auto& curve : curves)
        if (!curve.empty()) values.push_back(curve[k]);
      const auto bounds = percentile_bounds(values);
      tlo[k] = bounds.first;
      thi[k] = bounds.second;
    }
    rows.traj_lo.push_back(std::move(tlo));
    rows.traj_hi.push_back(std::move(thi));
    return true;
  } catch (const Error& e) {
    warnings.push_back("replication " + std::to_string(replication + 1) + " (" + tag +
                       ") failed: " + e.what());
    return false;
  }
}

}  // namespace

BenchmarkReport run_benchmark(const SimConfig& config, const FitConfig& fit_config,
                              const BenchmarkOptions& options) {
  config.validate();
  if (options.bootstrap_reps < 2) fail("run_benchmark: bootstrap_reps must be at least 2");
  if (options.trajectory_draws < 1) fail("run_benchmark: trajectory_draws must be positive");
  if (options.trajectory_truth_subjects < 1)
    fail("run_benchmark: trajectory_truth_subjects must be positive");

  BenchmarkReport report;
  if (options.grid.empty()) {
    for (int k = 1; k <= 20; ++k) report.grid.push_back(0.1 * k);
  } else {
    report.grid = options.grid;
  }
  report.parameter = param_names(1, 1, 1);
  report.truth = flatten(config.truth);
  // Covariates are standard normal in the generator, so the population
  // trajectory is evaluated at zero design means.
  DesignMeans pop_means;
  pop_means.x_long = Eigen::VectorXd::Zero(1);
  pop_means.x_stable = Eigen::VectorXd::Zero(1);
  pop_means.w_tte = Eigen::VectorXd::Zero(1);
  report.trajectory_truth =
      simulate_trajectory_truth(config.truth, pop_means, report.grid,
                                options.trajectory_truth_subjects, config.seed)
          .mean;

  PipelineRows full, baseline;
  for (int r = 0; r < config.replications; ++r) {
    const SimulatedCohort cohort = generate_dataset(config, r);
    report.regenerated += cohort.regenerated;
    bool ok = run_pipeline(cohort, fit_config, false, r, options, report.grid, full,
                           report.warnings);
    if (options.include_baseline)
      ok = run_pipeline(cohort, fit_config, true, r, options, report.grid, baseline,
                        report.warnings) &&
           ok;
    if (ok)
      ++report.replications_used;
    else
      ++report.failures;
  }

  if (full.est.empty()) fail("run_benchmark: every replication failed");
  report.params_full = compute_metrics(full.est, report.truth, &full.lo, &full.hi);
  report.trajectory_full =
      compute_metrics(full.traj, report.trajectory_truth, &full.traj_lo, &full.traj_hi);
  if (options.include_baseline && !baseline.est.empty()) {
    report.params_baseline =
        compute_metrics(baseline.est, report.truth, &baseline.lo, &baseline.hi);
    report.trajectory_baseline = compute_metrics(baseline.traj, report.trajectory_truth,
                                                 &baseline.traj_lo, &baseline.traj_hi);
  }
  return report;
}

}  // namespace cpcure
