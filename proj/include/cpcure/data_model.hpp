#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cpcure {

// Group membership: events are change-point group by construction; censored
// subjects are unlabeled until the model assigns a posterior probability.
enum class GroupLabel { kChangePoint, kStable, kUnknown };

// One subject's longitudinal record plus follow-up info. Times are in years.
// event_time is on the natural scale; the AFT operates on its logarithm.
struct SubjectData {
  std::string id;
  Eigen::VectorXd visit_times;  // strictly increasing, n_i >= 1
  Eigen::VectorXd y;            // outcome at each visit
  Eigen::MatrixXd x_long;       // n_i x p_long, rows constant within subject
  Eigen::MatrixXd x_stable;     // n_i x p_stable, rows constant within subject
  Eigen::VectorXd w_tte;        // q
  double event_time = 0.0;      // follow-up end, years, > 0
  bool event = false;           // true: progression observed at event_time

  int n_visits() const { return static_cast<int>(visit_times.size()); }
  double log_event_time() const;
  void validate() const;  // throws Error naming this subject
};

GroupLabel group_label(const SubjectData& s);

struct StudyDataset {
  std::vector<SubjectData> subjects;

  int n_subjects() const { return static_cast<int>(subjects.size()); }
  long total_obs() const;
  int p_long() const;
  int p_stable() const;
  int q_tte() const;
  void validate() const;  // per-subject checks, consistent dims, unique ids
};

// Parameters of the two-group mixture: a change-point group tied to the
// event process, and a stable group that never progresses.
struct ModelParameters {
  double stable_rate = 0.0;  // probability of the stable group
  Eigen::VectorXd tte_coef;  // log event time regression coefficients
  double tte_sd = 1.0;
  Eigen::Vector4d re_mean = Eigen::Vector4d::Zero();  // (omega, b0, b1, b2)
  Eigen::Matrix4d re_cov = Eigen::Matrix4d::Identity();
  Eigen::VectorXd long_coef;  // outcome fixed effects, change-point group
  double long_sd = 1.0;
  Eigen::Vector2d stable_re_mean = Eigen::Vector2d::Zero();  // (b0, b1)
  Eigen::Matrix2d stable_re_cov = Eigen::Matrix2d::Identity();
  Eigen::VectorXd stable_long_coef;
  double stable_long_sd = 1.0;

  void validate() const;
};

// Flat parameter view with a fixed coordinate order matching param_names();
// used for convergence checks, bootstrap percentiles, and metric tables.
std::vector<double> flatten(const ModelParameters& p);
ModelParameters unflatten(const std::vector<double>& v, int p_long, int p_stable, int q_tte);
std::vector<std::string> param_names(int p_long, int p_stable, int q_tte);

// Covariate averages at which population-level trajectories are evaluated.
struct DesignMeans {
  Eigen::VectorXd x_long;
  Eigen::VectorXd x_stable;
  Eigen::VectorXd w_tte;
};
DesignMeans design_means(const StudyDataset& data);

// Monte Carlo size per subject as a function of the EM iteration: starts at
// `initial`, multiplied by `growth` every `every` iterations, capped.
struct DrawsSchedule {
  int initial = 200;
  double growth = 1.5;
  int every = 10;
  int cap = 5000;

  int at(int iteration) const;
};

struct FitConfig {
  bool baseline_mode = false;  // pins stable_rate to zero (no stable group)
  int max_em_iter = 100;
  // Convergence: max relative parameter change below rel_tol on three
  // consecutive iterations, with the smoothed log-likelihood not decreasing
  // beyond Monte Carlo noise.
  double rel_tol = 1e-3;
  DrawsSchedule schedule;
  double ess_floor_frac = 0.1;  // redraw when ESS < frac * K
  int ess_redraw_factor = 4;
  int fixed_draws = 0;  // > 0: override the schedule with a constant K
  std::uint64_t seed = 0;
  std::uint64_t stream_salt = 0;  // separates bootstrap replicate fits
  int threads = 1;
  std::optional<ModelParameters> warm_start;
};

}  // namespace cpcure
