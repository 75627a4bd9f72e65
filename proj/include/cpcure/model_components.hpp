#pragma once

#include <Eigen/Dense>

#include "cpcure/data_model.hpp"
#include "cpcure/distributions.hpp"

namespace cpcure {

// Design row per visit: (1, (s - omega) I(s <= omega), (s - omega) I(s > omega)).
// A visit exactly at the change point goes to the pre-change column (where its
// entry is zero anyway); the rule is fixed so results are deterministic.
Eigen::MatrixXd piecewise_design(const Eigen::VectorXd& times, double omega);

struct BPosterior {
  Eigen::Vector3d mean;
  Eigen::Matrix3d cov;
};

struct StablePosterior {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;

  // E[(b - center)(b - center)'] = cov + (mean - center)(mean - center)'.
  Eigen::Matrix2d second_moment(const Eigen::Vector2d& center) const {
    const Eigen::Vector2d d = mean - center;
    return cov + d * d.transpose();
  }
};

// Change-point-group likelihood kernel for one subject with the random
// effects integrated out, conditional on the change point omega:
//
//   y | omega ~ N(X beta + Z(omega) m(omega), Z S Z' + sigma_y^2 I)
//   b | omega, y ~ N(posterior mean, posterior cov)
//
// where (m(omega), S) are the Gaussian conditional moments of b given omega.
// All omega-independent pieces are precomputed; evaluations cost O(n_i) and
// reuse internal buffers, so they perform no heap allocation. The buffers
// make instances single-thread only: use one kernel per thread.
class CpSubjectKernel {
 public:
  CpSubjectKernel(const SubjectData& s, const ModelParameters& p);

  double marginal_loglik(double omega) const;
  BPosterior posterior(double omega) const;
  // Single pass computing both; this is the E-step hot path.
  double both(double omega, BPosterior& post) const;
  // both() plus the posterior visit-level fit: zb = Z(omega) E[b | y, omega]
  // (length n_i) and zb_sq = E[ ||Z b||^2 | y, omega ], which includes the
  // posterior-covariance trace term.
  double both_with_zb(double omega, BPosterior& post, Eigen::VectorXd& zb,
                      double& zb_sq) const;

 private:
  double evaluate(double omega, BPosterior* post) const;

  Eigen::VectorXd times_;
  Eigen::VectorXd resid0_;  // y - X beta
  OmegaConditional cond_;
  double sigma2_;
  int n_;
  mutable Eigen::MatrixXd Z_;
  mutable Eigen::MatrixXd U_;
  mutable Eigen::VectorXd reff_;
};

double cp_y_marginal_given_omega(const SubjectData& s, double omega, const ModelParameters& p);
BPosterior cp_b_posterior(const SubjectData& s, double omega, const ModelParameters& p);

// Stable-group analogue with design (1, s) and 2-D random effects; nothing
// depends on omega, so moments are fixed at construction.
class StableSubjectKernel {
 public:
  StableSubjectKernel(const SubjectData& s, const ModelParameters& p);

  double marginal_loglik() const { return loglik_; }
  const StablePosterior& posterior() const { return post_; }

 private:
  double loglik_;
  StablePosterior post_;
};

double stable_marginal_loglik(const SubjectData& s, const ModelParameters& p);
StablePosterior stable_b_posterior(const SubjectData& s, const ModelParameters& p);

}  // namespace cpcure
