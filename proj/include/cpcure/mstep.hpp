#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "cpcure/data_model.hpp"
#include "cpcure/estep.hpp"
#include "cpcure/lbfgs.hpp"

namespace cpcure {

// Sufficient statistics for the truncated random-effect objective, reduced
// over subjects and draws once per M-step. `bounds` holds every truncation
// pair (upper bound, weight) sorted ascending by bound, with `suffix_weight`
// the tail sums used to batch pairs whose upper bound is effectively +inf.
struct QrStats {
  double total_weight = 0.0;                     // W = sum_i d_i
  Eigen::Vector4d moment1 = Eigen::Vector4d::Zero();   // sum_i d_i E[(omega, b)]
  Eigen::Matrix4d moment2 = Eigen::Matrix4d::Zero();   // sum_i d_i E[(omega,b)(omega,b)']
  std::vector<double> bound;                     // sorted ascending
  std::vector<double> bound_weight;              // d_i * draw weight, same order
  std::vector<double> suffix_weight;             // suffix_weight[i] = sum_{j>=i} bound_weight[j]
};

QrStats collect_qr_stats(const std::vector<SubjectEStep>& subjects);

// Optimizer coordinates for the truncated random-effect block:
// x = (mu_r[4], vech(P)[10]) where P is the lower Cholesky factor of Sigma_r
// with log-transformed diagonal, vech taken row-wise. Any finite x maps to an
// SPD Sigma_r, and the round trip through qr_pack/qr_unpack is exact to
// floating-point roundoff.
Eigen::VectorXd qr_pack(const Eigen::Vector4d& mu, const Eigen::Matrix4d& sigma);
void qr_unpack(const Eigen::VectorXd& x, Eigen::Vector4d& mu, Eigen::Matrix4d& sigma);

// Default optimizer box: the change-point location mean in [-10, 10] years,
// other means in [-50, 50], log Cholesky diagonals in [log 1e-4, log 1e2],
// off-diagonals in [-50, 50]. Keeps the truncation normalizer away from
// total underflow.
Box qr_default_box();

// Expected complete-data log-likelihood block for (mu_r, Sigma_r) under the
// truncated-at-zero-and-exp(t*) random-effect law, with analytic gradient in
// the qr_pack coordinates. Maximization orientation: larger is better.
double q_r_objective(const QrStats& stats, const Eigen::VectorXd& x, Eigen::VectorXd& grad);

// Q-value blocks under fixed E-step statistics, used to verify that each
// update weakly increases its own block.
double q_stable_rate(const std::vector<SubjectEStep>& subjects, double stable_rate);
double q_aft(const StudyDataset& data, const std::vector<SubjectEStep>& subjects,
             const Eigen::VectorXd& gamma, double sigma_tte);
double q_long_cp(const StudyDataset& data, const std::vector<SubjectEStep>& subjects,
                 const Eigen::VectorXd& beta, double sigma_y);
double q_stable_block(const StudyDataset& data, const std::vector<SubjectEStep>& subjects,
                      const Eigen::Vector2d& mu, const Eigen::Matrix2d& cov,
                      const Eigen::VectorXd& beta_s, double sigma_ys);

// Closed-form updates. Each warns through `warnings` (if non-null) when a
// variance hits the floor or a block freezes for lack of weight.
double update_stable_rate(const std::vector<SubjectEStep>& subjects);

struct RegressionUpdate {
  Eigen::VectorXd coef;
  double sd = 0.0;
};
RegressionUpdate update_aft(const StudyDataset& data,
                            const std::vector<SubjectEStep>& subjects, double var_floor,
                            std::vector<std::string>* warnings);
RegressionUpdate update_long_cp(const StudyDataset& data,
                                const std::vector<SubjectEStep>& subjects, double var_floor,
                                std::vector<std::string>* warnings);

struct StableUpdate {
  Eigen::Vector2d re_mean;
  Eigen::Matrix2d re_cov;
  Eigen::VectorXd coef;
  double sd = 0.0;
  bool updated = false;  // false: no stable weight, values copied from current
};
StableUpdate update_stable_params(const StudyDataset& data,
                                  const std::vector<SubjectEStep>& subjects,
                                  const ModelParameters& current, double var_floor,
                                  std::vector<std::string>* warnings);

struct ReOptSettings {
  int max_iter = 100;
  double grad_tol = 1e-6;  // scaled by the total change-point weight
  int memory = 10;
  Box box;  // empty => qr_default_box()
};

struct ReUpdate {
  Eigen::Vector4d re_mean;
  Eigen::Matrix4d re_cov;
  bool converged = true;
  int iterations = 0;
};
// Box-constrained quasi-Newton ascent warm-started at (mu0, sigma0); never
// returns a worse objective value than the warm start, and the returned
// covariance is SPD by construction.
ReUpdate update_re_params(const QrStats& stats, const Eigen::Vector4d& mu0,
                          const Eigen::Matrix4d& sigma0, const ReOptSettings& settings,
                          std::vector<std::string>* warnings);

struct MStepOptions {
  bool baseline_mode = false;
  double var_floor = 1e-8;
  ReOptSettings re_opt;
};

struct MStepResult {
  ModelParameters params;
  std::vector<std::string> warnings;
  bool re_opt_converged = true;
  int re_opt_iterations = 0;
};

// Full M-step: every update computed from the same E-step statistics. In
// baseline mode the stable rate is pinned at zero and the stable block is
// left untouched. If the change-point side has no weight at all (every
// responsibility is 1), its blocks freeze at `current` with a warning.
MStepResult run_mstep(const StudyDataset& data, const std::vector<SubjectEStep>& subjects,
                      const ModelParameters& current, const MStepOptions& options);

}  // namespace cpcure
