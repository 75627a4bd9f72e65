#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpcure/data_model.hpp"

namespace cpcure {

// Deterministic starting values from simple regressions: event-time
// coefficients from least squares on event subjects' log times, fixed
// effects from pooled least squares, the change-point location from the
// median time of each event subject's lowest outcome, crude random-effect
// means from a two-piece fit at those per-subject nadirs, and diagonal
// random-effect covariances from a quarter of the crude estimates' scatter.
// The outcome noise scale pools residuals from per-subject piecewise fits,
// so it is not inflated by between-subject variation. In baseline mode the
// stable fraction starts (and stays) at zero; without any observed events
// baseline mode cannot identify the event-time block and throws.
ModelParameters initialize_params(const StudyDataset& data, bool baseline_mode);

// Monte Carlo estimate of the observed-data log-likelihood and its standard
// error, using draw streams dedicated to monitoring (independent of any
// E-step's draws). Throws, naming the subjects, if any subject's likelihood
// underflows to zero.
struct LoglikEstimate {
  double value = 0.0;
  double se = 0.0;
};
LoglikEstimate observed_loglik(const StudyDataset& data, const ModelParameters& params, int K,
                               std::uint64_t seed, std::uint64_t stream_salt = 0,
                               int threads = 1);

struct FitDiagnostics {
  double initial_loglik = 0.0;         // Monte Carlo log-likelihood at the starting values
  std::vector<double> loglik_se;       // per loglik_trace entry
  std::vector<double> min_ess;         // per iteration, worst subject
  std::vector<double> median_ess;      // per iteration
  std::vector<int> draws;              // per iteration K before any redraw
  std::vector<double> max_rel_change;  // per iteration parameter movement
  std::vector<std::string> warnings;
};

struct FitResult {
  ModelParameters params;
  // Observed-data log-likelihood after each iteration's update; the last
  // entry is evaluated at the returned parameters with monitor streams,
  // earlier entries come from the following iteration's E-step (the same
  // estimator, one evaluation per parameter value).
  std::vector<double> loglik_trace;
  bool converged = false;
  int iterations_used = 0;
  std::uint64_t seed = 0;
  FitDiagnostics diagnostics;
};

// Monte Carlo EM: alternates the importance-sampling E-step with the exact
// M-step updates until the largest relative parameter change stays below
// rel_tol for three consecutive iterations while the likelihood trace's
// three-iteration moving average is not decreasing beyond twice its Monte
// Carlo standard error. Hitting max_em_iter first returns converged=false
// rather than throwing. Bit-reproducible for a fixed seed, for any thread
// count and subject order.
FitResult fit(const StudyDataset& data, const FitConfig& config);

}  // namespace cpcure
