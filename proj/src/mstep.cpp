#include "cpcure/mstep.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cpcure/special.hpp"
#include "cpcure/util.hpp"

namespace cpcure {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Pairs whose standardized upper bound exceeds this are merged into one
// closed-form tail contribution: Phi(8.5) differs from 1 by ~1e-17, below
// double resolution in the objective.
constexpr double kUpperTailCut = 8.5;

void append_warning(std::vector<std::string>* warnings, const std::string& msg) {
  if (warnings != nullptr) warnings->push_back(msg);
}

void check_full_rank(const Eigen::MatrixXd& normal_matrix, const std::string& what) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normal_matrix);
  const double top = es.eigenvalues().maxCoeff();
  if (!(top > 0.0) || es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, top))
    fail(what + " is rank deficient under the current weights");
}

double floored_variance(double s2, double var_floor, const std::string& what,
                        std::vector<std::string>* warnings) {
  if (s2 < var_floor) {
    append_warning(warnings, what + " variance fell below the floor and was clipped");
    return var_floor;
  }
  return s2;
}

// Weighted second moment of the centered stable posterior:
// E[(b - mu)(b - mu)'] = cov + (mean - mu)(mean - mu)'.
Eigen::Matrix2d stable_centered_second(const StablePosterior& post,
                                       const Eigen::Vector2d& mu) {
  const Eigen::Vector2d d = post.mean - mu;
  return post.cov + d * d.transpose();
}

// E[ || y - Xs beta - Zs b ||^2 ] for the stable design Zs = (1, s).
double stable_resid_second(const SubjectData& s, const StablePosterior& post,
                           const Eigen::VectorXd& beta_s) {
  const Eigen::VectorXd r = s.y - s.x_stable * beta_s;
  const Eigen::VectorXd zb = post.mean(0) + (post.mean(1) * s.visit_times.array());
  double quad = (r - zb).squaredNorm();
  for (int j = 0; j < s.n_visits(); ++j) {
    const double t = s.visit_times(j);
    quad += post.cov(0, 0) + 2.0 * t * post.cov(0, 1) + t * t * post.cov(1, 1);
  }
  return quad;
}

}  // namespace

QrStats collect_qr_stats(const std::vector<SubjectEStep>& subjects) {
  QrStats stats;
  std::vector<std::pair<double, double>> pairs;
  for (const SubjectEStep& es : subjects) {
    const double d = es.d_weight;
    if (d <= 0.0) continue;
    stats.total_weight += d;
    stats.moment1 += d * es.r_mean;
    stats.moment2 += d * es.r_second;
    for (const auto& [upper, w] : es.trunc_bounds)
      if (w > 0.0) pairs.emplace_back(upper, d * w);
  }
  std::sort(pairs.begin(), pairs.end());
  const std::size_t m = pairs.size();
  stats.bound.resize(m);
  stats.bound_weight.resize(m);
  stats.suffix_weight.assign(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    stats.bound[i] = pairs[i].first;
    stats.bound_weight[i] = pairs[i].second;
  }
  for (std::size_t i = m; i-- > 0;)
    stats.suffix_weight[i] = stats.suffix_weight[i + 1] + stats.bound_weight[i];
  return stats;
}

Eigen::VectorXd qr_pack(const Eigen::Vector4d& mu, const Eigen::Matrix4d& sigma) {
  const Eigen::LLT<Eigen::Matrix4d> llt(sigma);
  if (llt.info() != Eigen::Success) fail("qr_pack: covariance is not positive definite");
  const Eigen::Matrix4d O = llt.matrixL();
  Eigen::VectorXd x(14);
  x.head<4>() = mu;
  int idx = 4;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c <= r; ++c) x(idx++) = r == c ? std::log(O(r, c)) : O(r, c);
  return x;
}

void qr_unpack(const Eigen::VectorXd& x, Eigen::Vector4d& mu, Eigen::Matrix4d& sigma) {
  if (x.size() != 14) fail("qr_unpack: expected 14 coordinates");
  mu = x.head<4>();
  Eigen::Matrix4d O = Eigen::Matrix4d::Zero();
  int idx = 4;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c <= r; ++c) {
      const double v = x(idx++);
      O(r, c) = r == c ? std::exp(v) : v;
    }
  sigma = O * O.transpose();
}

Box qr_default_box() {
  Box box;
  box.lower.resize(14);
  box.upper.resize(14);
  box.lower.head<4>().setConstant(-50.0);
  box.upper.head<4>().setConstant(50.0);
  box.lower(0) = -10.0;  // change-point location mean, in years
  box.upper(0) = 10.0;
  int idx = 4;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c <= r; ++c) {
      box.lower(idx) = r == c ? std::log(1e-4) : -50.0;
      box.upper(idx) = r == c ? std::log(1e2) : 50.0;
      ++idx;
    }
  return box;
}

double q_r_objective(const QrStats& stats, const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
  if (x.size() != 14) fail("q_r_objective: expected 14 coordinates");
  if (stats.bound.empty()) fail("q_r_objective: no change-point draws to fit");

  const Eigen::Vector4d mu = x.head<4>();
  Eigen::Matrix4d O = Eigen::Matrix4d::Zero();
  {
    int idx = 4;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c <= r; ++c) {
        const double v = x(idx++);
        O(r, c) = r == c ? std::exp(v) : v;
      }
  }
  const Eigen::Matrix4d Oinv =
      O.triangularView<Eigen::Lower>().solve(Eigen::Matrix4d::Identity());
  const Eigen::Matrix4d Lambda = Oinv.transpose() * Oinv;
  // log|Sigma| = 2 sum log O_ii = 2 * (sum of the log-diagonal coordinates).
  const double logdet = 2.0 * (x(4) + x(6) + x(9) + x(13));

  const double W = stats.total_weight;
  const Eigen::Matrix4d Mt = stats.moment2 - stats.moment1 * mu.transpose() -
                             mu * stats.moment1.transpose() + W * mu * mu.transpose();

  double value = -2.0 * W * kLog2Pi - 0.5 * W * logdet - 0.5 * (Lambda * Mt).trace();
  Eigen::Vector4d grad_mu = Lambda * (stats.moment1 - W * mu);
  Eigen::Matrix4d G = 0.5 * (Lambda * Mt * Lambda - W * Lambda);

  // Truncation normalizer: subtract sum of weights * log(Phi(beta)-Phi(alpha))
  // with alpha = -mu_w/sigma_w shared and beta depending on each upper bound.
  const double sigma_w = O(0, 0);
  const double alpha = -mu(0) / sigma_w;
  const double lphi_alpha = -0.5 * alpha * alpha - 0.5 * kLog2Pi;
  double norm_value = 0.0;
  double norm_dmu = 0.0;    // d/d mu_w of the summed log normalizers
  double norm_ds00 = 0.0;   // d/d Sigma_00
  std::size_t split = stats.bound.size();
  if (alpha <= 0.0) {
    // Bounds beyond mu + cut*sigma contribute Phi(beta) = 1 exactly at double
    // precision; batch them through the suffix sums.
    split = static_cast<std::size_t>(
        std::lower_bound(stats.bound.begin(), stats.bound.end(),
                         mu(0) + kUpperTailCut * sigma_w) -
        stats.bound.begin());
  }
  for (std::size_t i = 0; i < split; ++i) {
    const double u = stats.bound_weight[i];
    const double beta = (stats.bound[i] - mu(0)) / sigma_w;
    const double logc = log_probit_interval(alpha, beta);
    if (logc == kNegInf)
      fail("q_r_objective: truncation normalizer underflowed; parameters degenerate");
    const double ra = std::exp(lphi_alpha - logc);
    const double rb = std::exp(-0.5 * beta * beta - 0.5 * kLog2Pi - logc);
    norm_value += u * logc;
    norm_dmu += u * (ra - rb) / sigma_w;
    norm_ds00 += u * (alpha * ra - beta * rb) / (2.0 * sigma_w * sigma_w);
  }
  if (split < stats.bound.size()) {
    const double u = stats.suffix_weight[split];
    const double logc = log_norm_sf(alpha);
    const double ra = std::exp(lphi_alpha - logc);
    norm_value += u * logc;
    norm_dmu += u * ra / sigma_w;
    norm_ds00 += u * alpha * ra / (2.0 * sigma_w * sigma_w);
  }
  value -= norm_value;
  grad_mu(0) -= norm_dmu;
  G(0, 0) -= norm_ds00;

  // Chain rule through Sigma = O O' and the log-diagonal map.
  const Eigen::Matrix4d dO = 2.0 * G * O;
  grad.resize(14);
  grad.head<4>() = grad_mu;
  int idx = 4;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c <= r; ++c) {
      grad(idx++) = r == c ? dO(r, r) * O(r, r) : dO(r, c);
    }
  return value;
}

double q_stable_rate(const std::vector<SubjectEStep>& subjects, double stable_rate) {
  double q = 0.0;
  for (const SubjectEStep& es : subjects) {
    const double rho = es.responsibility;
    if (rho > 0.0) q += rho * std::log(stable_rate);
    if (rho < 1.0) q += (1.0 - rho) * std::log1p(-stable_rate);
  }
  return q;
}

double q_aft(const StudyDataset& data, const std::vector<SubjectEStep>& subjects,
             const Eigen::VectorXd& gamma, double sigma_tte) {
  const double s2 = sigma_tte * sigma_tte;
  double q = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const SubjectEStep& es = subjects[i];
    const double mu = data.subjects[i].w_tte.dot(gamma);
    q += -es.d_weight * 0.5 *
         (kLog2Pi + std::log(s2) + (es.m2_logt - 2.0 * mu * es.m1_logt + mu * mu) / s2);
  }
  return q;
}

double q_long_cp(const StudyDataset& data, const std::vector<SubjectEStep>& subjects,
                 const Eigen::VectorXd& beta, double sigma_y) {
  const double s2 = sigma_y * sigma_y;
  double q = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const SubjectEStep& es = subjects[i];
    const SubjectData& s = data.subjects[i];
    const Eigen::VectorXd r = s.y - s.x_long * beta;
    const double quad = r.squaredNorm() - 2.0 * r.dot(es.zb_mean) + es.zb_sq;
    q += -es.d_weight * 0.5 * (s.n_visits() * (kLog2Pi + std::log(s2)) + quad / s2);
  }
  return q;
}

double q_stable_block(const StudyDataset& data, const std::vector<SubjectEStep>& subjects,
                      const Eigen::Vector2d& mu, const Eigen::Matrix2d& cov,
                      const Eigen::VectorXd& beta_s, double sigma_ys) {
  const Eigen::LLT<Eigen::Matrix2d> llt(cov);
  if (llt.info() != Eigen::Success) fail("q_stable_block: covariance not positive definite");
  const double logdet = 2.0 * std::log(llt.matrixL()(0, 0)) + 2.0 * std::log(llt.matrixL()(1, 1));
  const Eigen::Matrix2d prec = llt.solve(Eigen::Matrix2d::Identity());
  const double s2 = sigma_ys * sigma_ys;
  double q = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const SubjectEStep& es = subjects[i];
    if (!es.has_stable || es.responsibility <= 0.0) continue;
    const SubjectData& s = data.subjects[i];
    const double rho = es.responsibility;
    q += -rho * (kLog2Pi + 0.5 * logdet +
                 0.5 * (prec * stable_centered_second(es.stable, mu)).trace());
    q += -rho * 0.5 *
         (s.n_visits() * (kLog2Pi + std::log(s2)) +
          stable_resid_second(s, es.stable, beta_s) / s2);
  }
  return q;
}

double update_stable_rate(const std::vector<SubjectEStep>& subjects) {
  if (subjects.empty()) fail("update_stable_rate: no subjects");
  double sum = 0.0;
  for (const SubjectEStep& es : subjects) sum += es.responsibility;
  return sum / static_cast<double>(subjects.size());
}

RegressionUpdate update_aft(const StudyDataset& data,
                            const std::vector<SubjectEStep>& subjects, double var_floor,
                            std::vector<std::string>* warnings) {
  const int p = static_cast<int>(data.subjects.front().w_tte.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  double sum_d = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const double d = subjects[i].d_weight;
    const Eigen::VectorXd& w = data.subjects[i].w_tte;
    A.noalias() += d * w * w.transpose();
    rhs.noalias() += d * w * subjects[i].m1_logt;
    sum_d += d;
  }
  if (!(sum_d > 0.0)) fail("update_aft: no change-point weight");
  check_full_rank(A, "the time-to-event design");

  RegressionUpdate out;
  out.coef = A.ldlt().solve(rhs);
  double acc = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const double mu = data.subjects[i].w_tte.dot(out.coef);
    acc += subjects[i].d_weight *
           (subjects[i].m2_logt - 2.0 * mu * subjects[i].m1_logt + mu * mu);
  }
  out.sd = std::sqrt(floored_variance(acc / sum_d, var_floor, "event-time", warnings));
  return out;
}

RegressionUpdate update_long_cp(const StudyDataset& data,
                                const std::vector<SubjectEStep>& subjects, double var_floor,
                                std::vector<std::string>* warnings) {
  const int p = static_cast<int>(data.subjects.front().x_long.cols());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  double sum_dn = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const double d = subjects[i].d_weight;
    const SubjectData& s = data.subjects[i];
    A.noalias() += d * s.x_long.transpose() * s.x_long;
    rhs.noalias() += d * s.x_long.transpose() * (s.y - subjects[i].zb_mean);
    sum_dn += d * s.n_visits();
  }
  if (!(sum_dn > 0.0)) fail("update_long_cp: no change-point weight");
  check_full_rank(A, "the longitudinal design");

  RegressionUpdate out;
  out.coef = A.ldlt().solve(rhs);
  double acc = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const SubjectData& s = data.subjects[i];
    const Eigen::VectorXd r = s.y - s.x_long * out.coef;
    acc += subjects[i].d_weight *
           (r.squaredNorm() - 2.0 * r.dot(subjects[i].zb_mean) + subjects[i].zb_sq);
  }
  out.sd = std::sqrt(floored_variance(acc / sum_dn, var_floor, "longitudinal", warnings));
  return out;
}

StableUpdate update_stable_params(const StudyDataset& data,
                                  const std::vector<SubjectEStep>& subjects,
                                  const ModelParameters& current, double var_floor,
                                  std::vector<std::string>* warnings) {
  StableUpdate out;
  out.re_mean = current.stable_re_mean;
  out.re_cov = current.stable_re_cov;
  out.coef = current.stable_long_coef;
  out.sd = current.stable_long_sd;

  double w_total = 0.0;
  for (const SubjectEStep& es : subjects)
    if (es.has_stable) w_total += es.responsibility;
  if (!(w_total > 1e-12)) {
    append_warning(warnings, "stable block has no responsibility weight; left unchanged");
    return out;
  }

  Eigen::Vector2d mu = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].has_stable) mu += subjects[i].responsibility * subjects[i].stable.mean;
  mu /= w_total;

  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].has_stable)
      cov += subjects[i].responsibility * stable_centered_second(subjects[i].stable, mu);
  cov /= w_total;
  {
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    if (es.eigenvalues().minCoeff() < var_floor) {
      append_warning(warnings,
                     "stable covariance update lost rank; eigenvalues floored");
      const Eigen::Vector2d ev = es.eigenvalues().cwiseMax(var_floor);
      cov = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    }
  }

  const int p = static_cast<int>(data.subjects.front().x_stable.cols());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  double sum_rn = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (!subjects[i].has_stable) continue;
    const double rho = subjects[i].responsibility;
    const SubjectData& s = data.subjects[i];
    const Eigen::VectorXd zb =
        subjects[i].stable.mean(0) + (subjects[i].stable.mean(1) * s.visit_times.array());
    A.noalias() += rho * s.x_stable.transpose() * s.x_stable;
    rhs.noalias() += rho * s.x_stable.transpose() * (s.y - zb);
    sum_rn += rho * s.n_visits();
  }
  check_full_rank(A, "the stable longitudinal design");
  out.coef = A.ldlt().solve(rhs);

  double acc = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (!subjects[i].has_stable) continue;
    acc += subjects[i].responsibility *
           stable_resid_second(data.subjects[i], subjects[i].stable, out.coef);
  }
  out.sd = std::sqrt(floored_variance(acc / sum_rn, var_floor, "stable longitudinal", warnings));
  out.re_mean = mu;
  out.re_cov = cov;
  out.updated = true;
  return out;
}

ReUpdate update_re_params(const QrStats& stats, const Eigen::Vector4d& mu0,
                          const Eigen::Matrix4d& sigma0, const ReOptSettings& settings,
                          std::vector<std::string>* warnings) {
  const Box box = settings.box.lower.size() == 14 ? settings.box : qr_default_box();
  const Eigen::VectorXd x0 = qr_pack(mu0, sigma0);

  const ObjectiveFn negated = [&stats](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    const double v = q_r_objective(stats, x, grad);
    grad = -grad;
    return -v;
  };
  const double tol = settings.grad_tol * std::max(1.0, stats.total_weight);
  const OptimResult res =
      minimize_box_lbfgs(negated, x0, box, settings.max_iter, tol, settings.memory);
  if (!res.converged)
    append_warning(warnings, "random-effect optimizer stopped at its iteration limit");

  ReUpdate out;
  qr_unpack(res.x, out.re_mean, out.re_cov);
  out.converged = res.converged;
  out.iterations = res.iterations;
  return out;
}

MStepResult run_mstep(const StudyDataset& data, const std::vector<SubjectEStep>& subjects,
                      const ModelParameters& current, const MStepOptions& options) {
  if (subjects.size() != data.subjects.size())
    fail("run_mstep: statistics and dataset sizes differ");
  MStepResult out;
  out.params = current;
  std::vector<std::string>* warn = &out.warnings;

  out.params.stable_rate = options.baseline_mode ? 0.0 : update_stable_rate(subjects);

  double cp_weight = 0.0;
  for (const SubjectEStep& es : subjects) cp_weight += es.d_weight;
  if (cp_weight > 1e-12) {
    const RegressionUpdate aft = update_aft(data, subjects, options.var_floor, warn);
    out.params.tte_coef = aft.coef;
    out.params.tte_sd = aft.sd;

    const RegressionUpdate lng = update_long_cp(data, subjects, options.var_floor, warn);
    out.params.long_coef = lng.coef;
    out.params.long_sd = lng.sd;

    const QrStats stats = collect_qr_stats(subjects);
    const ReUpdate re =
        update_re_params(stats, current.re_mean, current.re_cov, options.re_opt, warn);
    out.params.re_mean = re.re_mean;
    out.params.re_cov = re.re_cov;
    out.re_opt_converged = re.converged;
    out.re_opt_iterations = re.iterations;
  } else {
    append_warning(warn, "no change-point weight; change-point blocks left unchanged");
  }

  if (!options.baseline_mode) {
    const StableUpdate st =
        update_stable_params(data, subjects, current, options.var_floor, warn);
    out.params.stable_re_mean = st.re_mean;
    out.params.stable_re_cov = st.re_cov;
    out.params.stable_long_coef = st.coef;
    out.params.stable_long_sd = st.sd;
  }
  return out;
}

}  // namespace cpcure
