#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpcure/data_model.hpp"

namespace cpcure {

// Default generating values for the benchmark scenarios: a V-shaped
// change-point group (drop at -0.5/year, rebound at +0.5/year around a
// change point near half a year) against a gently drifting stable group,
// with a 30% stable fraction. The spreads are sized so that crude
// starting-value recipes behave well at cohort scale.
ModelParameters default_benchmark_truth();

// Generative benchmark settings. `truth` carries every parameter of the
// two-group model; the remaining fields describe the observation process.
// Cohorts use a single standard-normal baseline covariate for each design
// block (one longitudinal coefficient, one stable coefficient, one
// event-time coefficient without intercept), so `truth` must have
// p_long = p_stable = q_tte = 1.
struct SimConfig {
  ModelParameters truth;
  int n = 200;
  double censor_rate = 0.5;     // exponential dropout rate, per year
  double visit_spacing = 0.1;   // years between scheduled visits
  double visit_noise_sd = 0.02; // half-normal jitter subtracted from the schedule
  int max_visits = 30;          // visits scheduled per subject before follow-up ends
  int replications = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// One generated cohort plus the latent truth behind it, kept for oracle
// checks: the group each subject was born into, the progression time before
// censoring (+inf for stable subjects), and the random effects used.
struct SimulatedCohort {
  StudyDataset data;
  std::vector<GroupLabel> labels;
  std::vector<double> progression_time;
  std::vector<Eigen::Vector4d> re;         // (omega, b0, b1, b2); zero for stable subjects
  std::vector<Eigen::Vector2d> stable_re;  // (b0, b1); zero for change-point subjects
  long regenerated = 0;  // subjects redrawn to keep visits inside follow-up
};

// Draws one cohort. Visit times follow the jittered schedule
// |spacing*j - z|, z half-normal, truncated at the follow-up end; a subject
// whose follow-up ends before the first scheduled visit gets a single visit
// at a tenth of the first scheduled time. The rare draws where that visit
// still falls outside follow-up, or where the jitter breaks monotonicity,
// are regenerated and counted. Deterministic in (seed, replication).
SimulatedCohort generate_dataset(const SimConfig& config, int replication = 0);

// Bias, mean squared error, and 95% interval coverage per coordinate.
// bias[k] uses the absolute value of the averaged signed error, so opposite
// errors cancel before the magnitude is taken and mse >= bias^2 always.
struct SimMetrics {
  std::vector<double> bias;
  std::vector<double> mse;
  std::vector<double> coverage;  // NaN per coordinate when no intervals given
};

// estimates: one row per replication, one column per coordinate. ci_lower /
// ci_upper, when present, must match estimates in shape. Throws on empty or
// ragged input.
SimMetrics compute_metrics(const std::vector<std::vector<double>>& estimates,
                           const std::vector<double>& truth,
                           const std::vector<std::vector<double>>* ci_lower = nullptr,
                           const std::vector<std::vector<double>>* ci_upper = nullptr);

// Population mean outcome at each grid time under the generative law with
// covariates held at the supplied design means (the generator's covariate
// expectation is zero), estimated by averaging the noiseless subject mean
// over `subjects` fresh latent draws: group membership, event time, and
// random effects. Mean-zero measurement noise and censoring do not move the
// population mean, so neither enters. Returns the means and their Monte
// Carlo standard errors.
struct TrajectoryTruth {
  std::vector<double> grid;
  std::vector<double> mean;
  std::vector<double> mc_se;
};
TrajectoryTruth simulate_trajectory_truth(const ModelParameters& truth, const DesignMeans& means,
                                          const std::vector<double>& grid, long subjects,
                                          std::uint64_t seed);

struct BenchmarkOptions {
  bool include_baseline = false;
  int bootstrap_reps = 100;            // percentile-interval replicates per dataset
  std::vector<double> grid;            // defaults to 0.1 .. 2.0 step 0.1
  long trajectory_truth_subjects = 100000;
  int trajectory_draws = 20000;        // Monte Carlo draws per trajectory evaluation
};

// Full benchmark: per replication, generate a cohort, fit the model (and the
// change-point-only comparator when requested), bootstrap percentile
// intervals, evaluate the marginal trajectory, and score everything against
// the generating truth.
struct BenchmarkReport {
  std::vector<std::string> parameter;  // coordinate names, order of flatten()
  std::vector<double> truth;           // flattened generating values
  SimMetrics params_full;
  std::optional<SimMetrics> params_baseline;
  std::vector<double> grid;
  std::vector<double> trajectory_truth;
  SimMetrics trajectory_full;
  std::optional<SimMetrics> trajectory_baseline;
  int replications_used = 0;
  int failures = 0;  // replications dropped because a fit errored
  long regenerated = 0;
  std::vector<std::string> warnings;
};
BenchmarkReport run_benchmark(const SimConfig& config, const FitConfig& fit_config,
                              const BenchmarkOptions& options = {});

}  // namespace cpcure
