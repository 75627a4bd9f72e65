#pragma once

#include <Eigen/Dense>
#include <utility>

#include "cpcure/rng.hpp"

namespace cpcure {

// Log density of N(mean, cov) at x. cov must be symmetric positive definite;
// a failed Cholesky factorization raises an error.
double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                  const Eigen::MatrixXd& cov);

// Conditional law of the last three coordinates of a 4-D Gaussian given the
// first: mean is affine in omega (c0 + c1*omega), covariance is constant.
struct OmegaConditional {
  Eigen::Vector3d c0;
  Eigen::Vector3d c1;
  Eigen::Matrix3d cov;
  Eigen::Matrix3d chol;  // lower Cholesky factor of cov

  Eigen::Vector3d mean(double omega) const { return c0 + c1 * omega; }
};

OmegaConditional condition_on_omega(const Eigen::Vector4d& mean, const Eigen::Matrix4d& cov);

// One-off conditional moments b | omega for N4(mean, cov).
std::pair<Eigen::Vector3d, Eigen::Matrix3d> mvn_condition(const Eigen::Vector4d& mean,
                                                          const Eigen::Matrix4d& cov,
                                                          double omega);

// N(mu, sigma^2) restricted to (lo, hi]. Sampling uses the inverse CDF in the
// central regime and an exponential-proposal rejection sampler once the
// interval lies beyond 4 standard deviations in either tail, so draws stay
// exact arbitrarily deep in the tails.
class TruncatedNormal {
 public:
  TruncatedNormal(double mu, double sigma, double lo, double hi);

  double sample(Rng& rng) const;
  double log_normalizer() const { return log_mass_; }

 private:
  double mu_, sigma_, alpha_, beta_;
  double pa_ = 0.0, pb_ = 0.0;  // CDF values, inverse regime only
  double log_mass_;
  enum class Regime { kInverse, kUpperTail, kLowerTail } regime_;
};

double truncnorm_sample(double mu, double sigma, double lo, double hi, Rng& rng);

// 4-D Gaussian truncated on the first coordinate only: omega in (0, upper].
// Draws by composition: omega from its truncated 1-D marginal, then the
// remaining block exactly from its untruncated conditional.
class PtmvnSampler {
 public:
  PtmvnSampler(const Eigen::Vector4d& mean, const Eigen::Matrix4d& cov);

  Eigen::Vector4d sample(double upper, Rng& rng) const;

 private:
  double mu_w_, sd_w_;
  OmegaConditional cond_;
};

Eigen::Vector4d ptmvn_sample(const Eigen::Vector4d& mean, const Eigen::Matrix4d& cov,
                             double upper, Rng& rng);

// Log-normal accelerated failure time pieces, parameterized on the natural
// event-time scale t (years): log t ~ N(w.gamma, sigma^2).
double lognormal_aft_logdensity(double t, const Eigen::VectorXd& w,
                                const Eigen::VectorXd& gamma, double sigma);
double lognormal_aft_logsurvival(double t, const Eigen::VectorXd& w,
                                 const Eigen::VectorXd& gamma, double sigma);

}  // namespace cpcure
