#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpcure/data_model.hpp"
#include "cpcure/mcem.hpp"

namespace cpcure {

// One bootstrap refit. Errored replicates keep default parameters and are
// never used for intervals; non-converged ones are kept for the record but
// excluded from intervals as well.
struct BootstrapReplicate {
  ModelParameters params;
  DesignMeans means;  // covariate averages of the resampled dataset
  bool converged = false;
  bool errored = false;
  std::string error;
};

struct BootstrapResult {
  std::vector<BootstrapReplicate> replicates;  // length B
  // Coordinate-wise 2.5th / 97.5th percentile bounds over converged
  // replicates (order statistics, invariant to replicate order).
  ModelParameters ci_lower;
  ModelParameters ci_upper;
  int failures = 0;  // errored plus non-converged
  std::vector<std::string> warnings;
};

// Draws B datasets of the original size by resampling subjects with
// replacement (duplicates renamed so ids stay unique and every copy gets its
// own draw streams), refits each one, and forms percentile intervals.
// Replicate fits use `config` as-is — callers wanting warm starts set
// config.warm_start — except for the RNG salt, which is re-derived per
// replicate. More than 20% failed replicates adds a warning; all replicates
// failing is an error.
BootstrapResult bootstrap(const StudyDataset& data, const FitConfig& config, int B);

// Population mean outcome over time: the stable-fraction-weighted mixture of
// a straight line (stable group) and a Monte Carlo average over event-time
// and random-effect draws (change-point group). `mean` is assembled from the
// two component curves, so the mixture identity is exact by construction.
struct TrajectoryEstimate {
  std::vector<double> grid;
  std::vector<double> mean;
  std::vector<double> ci_lower;  // filled by trajectory_ci, empty otherwise
  std::vector<double> ci_upper;
  std::vector<double> stable_mean;
  std::vector<double> cp_mean;
  std::vector<double> mc_se;  // Monte Carlo standard error of `mean`
};

// One shared draw set is evaluated at every grid time, which keeps the curve
// smooth in s; the estimand is unchanged relative to drawing per time point.
TrajectoryEstimate marginal_trajectory(const ModelParameters& params, const DesignMeans& means,
                                       const std::vector<double>& grid, int J,
                                       std::uint64_t seed, std::uint64_t stream_salt = 0);

// Pointwise difference of two trajectories (first minus second); the grids
// must agree.
std::vector<double> average_treatment_effect(const TrajectoryEstimate& treat,
                                             const TrajectoryEstimate& control);

struct TrajectoryCiOptions {
  int bootstrap_reps = 500;
  std::vector<double> grid;  // required, strictly increasing
  int draws = 100000;        // Monte Carlo draws per trajectory evaluation
  // Settings for replicate refits; defaults to the main config warm-started
  // at each arm's full-data estimate.
  std::optional<FitConfig> replicate_config;
};

struct ArmTrajectory {
  std::string name;
  FitResult fit;                 // full-data fit for this arm
  TrajectoryEstimate trajectory; // point curve with percentile bands
  int failures = 0;              // failed bootstrap replicates
};

struct TrajectoryCiResult {
  std::vector<ArmTrajectory> arms;  // in input order
  // Present with two arms: first arm minus second, with percentile bands
  // from paired replicate differences (arms are resampled independently).
  std::vector<double> ate;
  std::vector<double> ate_lower;
  std::vector<double> ate_upper;
  // Earliest grid time where the two arms' bands are disjoint, and where the
  // ATE band's upper bound falls below zero; absent when that never happens
  // (or with one arm).
  std::optional<double> first_band_separation;
  std::optional<double> first_ate_upper_below_zero;
  std::vector<std::string> warnings;
};

// Fits each arm, bootstraps each arm independently, and evaluates the
// marginal trajectory per replicate to form percentile bands per grid time.
// Accepts one arm (bands only) or two (bands plus treatment-effect curve).
TrajectoryCiResult trajectory_ci(const std::vector<std::pair<std::string, StudyDataset>>& arms,
                                 const FitConfig& config, const TrajectoryCiOptions& options);

// 2.5th / 97.5th percentile order statistics: indices floor(0.025 (m-1)) and
// ceil(0.975 (m-1)) of the sorted values, so two values give min/max.
std::pair<double, double> percentile_bounds(std::vector<double> values);

// Mean trajectory per bootstrap replicate, one distinct draw stream each;
// replicates that errored or did not converge leave empty rows.
std::vector<std::vector<double>> replicate_trajectories(const BootstrapResult& boot,
                                                        const std::vector<double>& grid, int J,
                                                        std::uint64_t seed,
                                                        std::uint64_t salt_base);

}  // namespace cpcure
