#include "cpcure/model_components.hpp"

#include <cmath>

#include "cpcure/util.hpp"

namespace cpcure {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;

// Marginal likelihood and posterior of a K-dimensional Gaussian effect in a
// linear-Gaussian observation model, in whitened low-rank form:
//
//   y = offset + Z b + e,  b ~ N(mp, L L'),  e ~ N(0, sigma2 I)
//
// Using U = Z L and Bt = sigma2 I + U'U, the marginal covariance
// Z L L' Z' + sigma2 I has determinant sigma2^(n-K) |Bt| and the quadratic
// form reduces through U'r. No inverse of LL' is formed, so the formulas
// stay exact as the prior covariance approaches singularity.
template <int K>
double gauss_lowrank(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                     const Eigen::Ref<const Eigen::VectorXd>& resid0,
                     const Eigen::Matrix<double, K, 1>& mp,
                     const Eigen::Matrix<double, K, K>& L, double sigma2, bool want_post,
                     Eigen::Matrix<double, K, 1>* post_mean,
                     Eigen::Matrix<double, K, K>* post_cov) {
  const int n = static_cast<int>(Z.rows());
  const Eigen::Matrix<double, Eigen::Dynamic, K> U = Z * L;
  Eigen::Matrix<double, K, K> Bt = U.transpose() * U;
  Bt.diagonal().array() += sigma2;
  const Eigen::LLT<Eigen::Matrix<double, K, K>> llt(Bt);
  if (llt.info() != Eigen::Success) fail("gauss_lowrank: inner factorization failed");

  const Eigen::VectorXd r_eff = resid0 - Z * mp;
  const Eigen::Matrix<double, K, 1> v = U.transpose() * r_eff;
  const Eigen::Matrix<double, K, 1> t = llt.solve(v);
  const double quad = (r_eff.squaredNorm() - v.dot(t)) / sigma2;
  double logdet = (n - K) * std::log(sigma2);
  for (int i = 0; i < K; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  const double loglik = -0.5 * (n * kLog2Pi + logdet + quad);

  if (want_post) {
    *post_mean = mp + L * t;
    Eigen::Matrix<double, K, K> Binv = llt.solve(Eigen::Matrix<double, K, K>::Identity());
    *post_cov = sigma2 * (L * Binv * L.transpose());
  }
  return loglik;
}

void fill_piecewise(const Eigen::VectorXd& times, double omega, Eigen::MatrixXd& Z) {
  const int n = static_cast<int>(times.size());
  for (int j = 0; j < n; ++j) {
    const double d = times(j) - omega;
    Z(j, 0) = 1.0;
    Z(j, 1) = d <= 0.0 ? d : 0.0;
    Z(j, 2) = d > 0.0 ? d : 0.0;
  }
}
}  // namespace

Eigen::MatrixXd piecewise_design(const Eigen::VectorXd& times, double omega) {
  Eigen::MatrixXd Z(times.size(), 3);
  fill_piecewise(times, omega, Z);
  return Z;
}

CpSubjectKernel::CpSubjectKernel(const SubjectData& s, const ModelParameters& p)
    : times_(s.visit_times), cond_(condition_on_omega(p.re_mean, p.re_cov)),
      sigma2_(p.long_sd * p.long_sd), n_(s.n_visits()), Z_(s.n_visits(), 3),
      U_(s.n_visits(), 3), reff_(s.n_visits()) {
  if (s.x_long.cols() != p.long_coef.size())
    fail("subject '" + s.id + "': covariate count does not match long_coef length");
  if (!(p.long_sd > 0.0)) fail("CpSubjectKernel: long_sd must be positive");
  resid0_ = s.y - s.x_long * p.long_coef;
}

// Same math as gauss_lowrank<3>, written against the preallocated buffers so
// repeated evaluations stay heap-free.
double CpSubjectKernel::evaluate(double omega, BPosterior* post) const {
  fill_piecewise(times_, omega, Z_);
  U_.noalias() = Z_ * cond_.chol;
  Eigen::Matrix3d Bt;
  Bt.noalias() = U_.transpose() * U_;
  Bt.diagonal().array() += sigma2_;
  const Eigen::LLT<Eigen::Matrix3d> llt(Bt);
  if (llt.info() != Eigen::Success) fail("CpSubjectKernel: inner factorization failed");

  const Eigen::Vector3d mp = cond_.mean(omega);
  reff_.noalias() = resid0_ - Z_ * mp;
  const Eigen::Vector3d v = U_.transpose() * reff_;
  const Eigen::Vector3d t = llt.solve(v);
  const double quad = (reff_.squaredNorm() - v.dot(t)) / sigma2_;
  double logdet = (n_ - 3) * std::log(sigma2_);
  for (int i = 0; i < 3; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  const double loglik = -0.5 * (n_ * kLog2Pi + logdet + quad);

  if (post != nullptr) {
    post->mean = mp + cond_.chol * t;
    const Eigen::Matrix3d Binv = llt.solve(Eigen::Matrix3d::Identity());
    post->cov = sigma2_ * (cond_.chol * Binv * cond_.chol.transpose());
  }
  return loglik;
}

double CpSubjectKernel::both(double omega, BPosterior& post) const {
  return evaluate(omega, &post);
}

double CpSubjectKernel::both_with_zb(double omega, BPosterior& post, Eigen::VectorXd& zb,
                                     double& zb_sq) const {
  const double loglik = evaluate(omega, &post);
  zb.resize(n_);
  zb.noalias() = Z_ * post.mean;
  double trace = 0.0;
  for (int j = 0; j < n_; ++j)
    trace += (Z_.row(j) * post.cov * Z_.row(j).transpose()).value();
  zb_sq = zb.squaredNorm() + trace;
  return loglik;
}

double CpSubjectKernel::marginal_loglik(double omega) const {
  return evaluate(omega, nullptr);
}

BPosterior CpSubjectKernel::posterior(double omega) const {
  BPosterior post;
  both(omega, post);
  return post;
}

double cp_y_marginal_given_omega(const SubjectData& s, double omega, const ModelParameters& p) {
  return CpSubjectKernel(s, p).marginal_loglik(omega);
}

BPosterior cp_b_posterior(const SubjectData& s, double omega, const ModelParameters& p) {
  return CpSubjectKernel(s, p).posterior(omega);
}

StableSubjectKernel::StableSubjectKernel(const SubjectData& s, const ModelParameters& p) {
  if (s.x_stable.cols() != p.stable_long_coef.size())
    fail("subject '" + s.id + "': covariate count does not match stable_long_coef length");
  if (!(p.stable_long_sd > 0.0)) fail("StableSubjectKernel: stable_long_sd must be positive");
  const int n = s.n_visits();
  Eigen::MatrixXd Z(n, 2);
  Z.col(0).setOnes();
  Z.col(1) = s.visit_times;
  const Eigen::VectorXd resid0 = s.y - s.x_stable * p.stable_long_coef;
  Eigen::LLT<Eigen::Matrix2d> llt(p.stable_re_cov);
  if (llt.info() != Eigen::Success)
    fail("StableSubjectKernel: stable_re_cov is not positive definite");
  const Eigen::Matrix2d L = llt.matrixL();
  loglik_ = gauss_lowrank<2>(Z, resid0, p.stable_re_mean, L,
                             p.stable_long_sd * p.stable_long_sd, true, &post_.mean,
                             &post_.cov);
}

double stable_marginal_loglik(const SubjectData& s, const ModelParameters& p) {
  return StableSubjectKernel(s, p).marginal_loglik();
}

StablePosterior stable_b_posterior(const SubjectData& s, const ModelParameters& p) {
  return StableSubjectKernel(s, p).posterior();
}

}  // namespace cpcure
