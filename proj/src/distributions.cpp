#include "cpcure/distributions.hpp"

#include <cmath>
#include <limits>

#include "cpcure/special.hpp"
#include "cpcure/util.hpp"

namespace cpcure {

namespace {
constexpr double kLogSqrt2Pi = 0.9189385332046727418;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTailCut = 4.0;  // switch to rejection sampling beyond here
}  // namespace

double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                  const Eigen::MatrixXd& cov) {
  const Eigen::Index d = x.size();
  if (mean.size() != d || cov.rows() != d || cov.cols() != d)
    fail("mvn_logpdf: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    fail("mvn_logpdf: covariance is not symmetric positive definite");
  const Eigen::VectorXd half = llt.matrixL().solve(x - mean);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) logdet += std::log(llt.matrixL()(i, i));
  return -0.5 * half.squaredNorm() - logdet - static_cast<double>(d) * kLogSqrt2Pi;
}

OmegaConditional condition_on_omega(const Eigen::Vector4d& mean, const Eigen::Matrix4d& cov) {
  const double var_w = cov(0, 0);
  if (!(var_w > 0.0)) fail("condition_on_omega: the omega variance must be positive");
  OmegaConditional out;
  const Eigen::Vector3d cross = cov.block<3, 1>(1, 0);
  out.c1 = cross / var_w;
  out.c0 = mean.tail<3>() - out.c1 * mean(0);
  out.cov = cov.block<3, 3>(1, 1) - cross * cross.transpose() / var_w;
  Eigen::LLT<Eigen::Matrix3d> llt(out.cov);
  if (llt.info() != Eigen::Success)
    fail("condition_on_omega: conditional covariance is not positive definite");
  out.chol = llt.matrixL();
  return out;
}

std::pair<Eigen::Vector3d, Eigen::Matrix3d> mvn_condition(const Eigen::Vector4d& mean,
                                                          const Eigen::Matrix4d& cov,
                                                          double omega) {
  const OmegaConditional c = condition_on_omega(mean, cov);
  return {c.mean(omega), c.cov};
}

TruncatedNormal::TruncatedNormal(double mu, double sigma, double lo, double hi)
    : mu_(mu), sigma_(sigma) {
  if (!(sigma > 0.0)) fail("TruncatedNormal: sigma must be positive");
  if (!(lo < hi)) fail("TruncatedNormal: requires lo < hi");
  alpha_ = (lo == -kInf) ? -kInf : (lo - mu) / sigma;
  beta_ = (hi == kInf) ? kInf : (hi - mu) / sigma;

  if (alpha_ >= kTailCut) {
    regime_ = Regime::kUpperTail;
    log_mass_ = (beta_ == kInf) ? log_norm_sf(alpha_) : log_probit_interval(alpha_, beta_);
  } else if (beta_ <= -kTailCut) {
    regime_ = Regime::kLowerTail;
    log_mass_ = (alpha_ == -kInf) ? log_norm_sf(-beta_) : log_probit_interval(alpha_, beta_);
  } else {
    regime_ = Regime::kInverse;
    pa_ = (alpha_ == -kInf) ? 0.0 : norm_cdf(alpha_);
    pb_ = (beta_ == kInf) ? 1.0 : norm_cdf(beta_);
    if (!(pb_ > pa_)) fail("TruncatedNormal: truncation interval carries no mass");
    log_mass_ = std::log(pb_ - pa_);
  }
  if (!std::isfinite(log_mass_))
    fail("TruncatedNormal: truncation interval carries no mass");
}

namespace {

// One-sided standardized tail sampler for Z | Z > a with a >= kTailCut, and
// optional cap b. Exponential proposal with rate chosen to minimize the
// rejection constant; for slices too thin for the exponential to land in,
// a bounded-rejection uniform proposal takes over.
double sample_upper_tail(double a, double b, Rng& rng) {
  const double lam = 0.5 * (a + std::sqrt(a * a + 4.0));
  const bool thin = std::isfinite(b) && (b - a) * lam < 0.35;
  for (int it = 0; it < 100000; ++it) {
    if (thin) {
      const double x = a + (b - a) * rng.uniform();
      if (std::log(rng.uniform()) <= 0.5 * (a * a - x * x)) return x;
    } else {
      const double x = a + rng.exponential(lam);
      if (x > b) continue;
      const double d = x - lam;
      if (std::log(rng.uniform()) <= -0.5 * d * d) return x;
    }
  }
  fail("TruncatedNormal: tail rejection sampler failed to accept");
}

}  // namespace

double TruncatedNormal::sample(Rng& rng) const {
  double z;
  switch (regime_) {
    case Regime::kInverse: {
      const double u = pa_ + (pb_ - pa_) * rng.uniform();
      z = norm_quantile(u);
      break;
    }
    case Regime::kUpperTail:
      z = sample_upper_tail(alpha_, beta_, rng);
      break;
    case Regime::kLowerTail:
      z = -sample_upper_tail(-beta_, -alpha_, rng);
      break;
  }
  z = std::min(std::max(z, alpha_), beta_);
  return mu_ + sigma_ * z;
}

double truncnorm_sample(double mu, double sigma, double lo, double hi, Rng& rng) {
  return TruncatedNormal(mu, sigma, lo, hi).sample(rng);
}

PtmvnSampler::PtmvnSampler(const Eigen::Vector4d& mean, const Eigen::Matrix4d& cov)
    : mu_w_(mean(0)), sd_w_(std::sqrt(cov(0, 0))), cond_(condition_on_omega(mean, cov)) {
  Eigen::LLT<Eigen::Matrix4d> llt(cov);
  if (llt.info() != Eigen::Success)
    fail("PtmvnSampler: covariance is not symmetric positive definite");
}

Eigen::Vector4d PtmvnSampler::sample(double upper, Rng& rng) const {
  if (!(upper > 0.0)) fail("PtmvnSampler: upper truncation bound must be positive");
  const double omega = TruncatedNormal(mu_w_, sd_w_, 0.0, upper).sample(rng);
  Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
  Eigen::Vector4d out;
  out(0) = omega;
  out.tail<3>() = cond_.mean(omega) + cond_.chol * z;
  return out;
}

Eigen::Vector4d ptmvn_sample(const Eigen::Vector4d& mean, const Eigen::Matrix4d& cov,
                             double upper, Rng& rng) {
  return PtmvnSampler(mean, cov).sample(upper, rng);
}

namespace {
double aft_standardized(double t, const Eigen::VectorXd& w, const Eigen::VectorXd& gamma,
                        double sigma) {
  if (!(t > 0.0)) fail("lognormal AFT: event time must be positive");
  if (!(sigma > 0.0)) fail("lognormal AFT: sigma must be positive");
  if (w.size() != gamma.size()) fail("lognormal AFT: covariate/coefficient size mismatch");
  return (std::log(t) - w.dot(gamma)) / sigma;
}
}  // namespace

double lognormal_aft_logdensity(double t, const Eigen::VectorXd& w,
                                const Eigen::VectorXd& gamma, double sigma) {
  const double z = aft_standardized(t, w, gamma, sigma);
  return -std::log(t) - std::log(sigma) - kLogSqrt2Pi - 0.5 * z * z;
}

double lognormal_aft_logsurvival(double t, const Eigen::VectorXd& w,
                                 const Eigen::VectorXd& gamma, double sigma) {
  return log_norm_sf(aft_standardized(t, w, gamma, sigma));
}

}  // namespace cpcure
