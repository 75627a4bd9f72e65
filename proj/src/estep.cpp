#include "cpcure/estep.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cpcure/distributions.hpp"
#include "cpcure/special.hpp"
#include "cpcure/util.hpp"

namespace cpcure {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Converts raw log weights into normalized weights on the draws, filling the
// evidence estimate (log mean weight) and the weight diagnostics.
void finalize_weights(const std::vector<double>& logw, const std::string& subject_id,
                      DrawSet& out) {
  const int K = static_cast<int>(logw.size());
  const double mx = *std::max_element(logw.begin(), logw.end());
  if (!std::isfinite(mx))
    fail("subject '" + subject_id +
         "': every importance weight underflowed; increase the draw count or reset parameters");
  double sum = 0.0;
  for (int k = 0; k < K; ++k) {
    const double w = std::exp(logw[k] - mx);
    out.draws[k].weight = w;
    sum += w;
  }
  double sum_sq = 0.0;
  for (int k = 0; k < K; ++k) {
    out.draws[k].weight /= sum;
    sum_sq += out.draws[k].weight * out.draws[k].weight;
  }
  out.ess = 1.0 / sum_sq;
  out.log_evidence = mx + std::log(sum) - std::log(static_cast<double>(K));
  // Delta-method variance of log(mean weight) under self-normalized
  // importance sampling; zero when all weights are equal.
  out.log_evidence_se2 = std::max(0.0, sum_sq - 1.0 / K);
}

// E[(omega, b)] outer-product and visit-level aggregates over a draw set.
void fold_draws(const SubjectData& s, const DrawSet& ds, SubjectEStep& out) {
  const int n = s.n_visits();
  out.m1_logt = 0.0;
  out.m2_logt = 0.0;
  out.zb_mean = Eigen::VectorXd::Zero(n);
  out.zb_sq = 0.0;
  out.r_mean.setZero();
  out.r_second.setZero();
  out.trunc_bounds.clear();
  if (s.event) {
    out.trunc_bounds.emplace_back(s.event_time, 1.0);
  } else {
    out.trunc_bounds.reserve(ds.draws.size());
  }

  for (const WeightedDraw& d : ds.draws) {
    const double w = d.weight;
    out.m1_logt += w * d.t_star;
    out.m2_logt += w * d.t_star * d.t_star;

    const Eigen::Vector3d& m = d.b_post.mean;
    const Eigen::Matrix3d& V = d.b_post.cov;
    // Z(omega) has rows (1, (s-w)I(s<=w), (s-w)I(s>w)): only one slope column
    // is active per visit, so the products reduce to scalar updates.
    for (int j = 0; j < n; ++j) {
      const double dt = s.visit_times(j) - d.omega;
      const int c = dt <= 0.0 ? 1 : 2;
      const double zb_j = m(0) + dt * m(c);
      out.zb_mean(j) += w * zb_j;
      out.zb_sq += w * (zb_j * zb_j + V(0, 0) + 2.0 * dt * V(0, c) + dt * dt * V(c, c));
    }

    Eigen::Vector4d r;
    r << d.omega, m;
    out.r_mean += w * r;
    out.r_second += w * (r * r.transpose());
    out.r_second.block<3, 3>(1, 1) += w * V;
    if (!s.event) out.trunc_bounds.emplace_back(std::exp(d.t_star), w);
  }
}

DrawSet expectations(const SubjectData& s, const ModelParameters& p, int K, Rng& rng) {
  return s.event ? event_expectations(s, p, K, rng) : censored_expectations(s, p, K, rng);
}

}  // namespace

double responsibility_from_logliks(double stable_rate, double log_stable, double log_cp,
                                   const std::string& subject_id) {
  const double la = std::log(stable_rate) + log_stable;       // stable branch
  const double lb = std::log1p(-stable_rate) + log_cp;        // change-point branch
  if (la == kNegInf && lb == kNegInf)
    fail("subject '" + subject_id + "': zero likelihood under both mixture branches");
  if (la == kNegInf) return 0.0;
  if (lb == kNegInf) return 1.0;
  // exp(la) / (exp(la) + exp(lb)) without leaving log space.
  const double m = std::max(la, lb);
  return std::exp(la - m) / (std::exp(la - m) + std::exp(lb - m));
}

double responsibility(const SubjectData& s, const ModelParameters& p, double evidence_cp) {
  if (s.event) return 0.0;
  return responsibility_from_logliks(p.stable_rate, stable_marginal_loglik(s, p), evidence_cp,
                                     s.id);
}

DrawSet event_expectations(const SubjectData& s, const ModelParameters& p, int K, Rng& rng) {
  if (!s.event) fail("subject '" + s.id + "': event_expectations needs an observed event");
  if (K < 1) fail("event_expectations: draw count must be at least 1");

  const double t_star = std::log(s.event_time);
  const TruncatedNormal omega_prop(p.re_mean(0), std::sqrt(p.re_cov(0, 0)), 0.0,
                                   s.event_time);
  const CpSubjectKernel kernel(s, p);

  DrawSet out;
  out.draws.resize(K);
  std::vector<double> logw(K);
  for (int k = 0; k < K; ++k) {
    WeightedDraw& d = out.draws[k];
    d.t_star = t_star;
    d.omega = omega_prop.sample(rng);
    logw[k] = kernel.both(d.omega, d.b_post);
  }
  finalize_weights(logw, s.id, out);
  return out;
}

DrawSet censored_expectations(const SubjectData& s, const ModelParameters& p, int K,
                              Rng& rng) {
  if (s.event) fail("subject '" + s.id + "': censored_expectations needs a censored subject");
  if (K < 1) fail("censored_expectations: draw count must be at least 1");

  const double log_t = std::log(s.event_time);
  const double aft_mean = s.w_tte.dot(p.tte_coef);
  const TruncatedNormal t_prop(aft_mean, p.tte_sd, log_t,
                               std::numeric_limits<double>::infinity());
  const double log_survival = t_prop.log_normalizer();
  if (!std::isfinite(log_survival))
    fail("subject '" + s.id +
         "': censoring time is too deep in the event-time tail to sample");

  const double mu_w = p.re_mean(0);
  const double sd_w = std::sqrt(p.re_cov(0, 0));
  const CpSubjectKernel kernel(s, p);

  DrawSet out;
  out.draws.resize(K);
  std::vector<double> logw(K);
  for (int k = 0; k < K; ++k) {
    WeightedDraw& d = out.draws[k];
    d.t_star = t_prop.sample(rng);
    d.omega = truncnorm_sample(mu_w, sd_w, 0.0, std::exp(d.t_star), rng);
    logw[k] = kernel.both(d.omega, d.b_post);
  }
  finalize_weights(logw, s.id, out);
  out.log_evidence += log_survival;
  return out;
}

SubjectEStep estep_subject(const SubjectData& s, const ModelParameters& p, int K,
                           double ess_floor_frac, int ess_redraw_factor, Rng& rng) {
  DrawSet ds = expectations(s, p, K, rng);
  if (ds.ess < ess_floor_frac * K && ess_redraw_factor > 1)
    ds = expectations(s, p, K * ess_redraw_factor, rng);

  SubjectEStep out;
  out.ess = ds.ess;
  out.draws_used = static_cast<int>(ds.draws.size());

  const double pi = p.stable_rate;
  if (s.event) {
    out.responsibility = 0.0;
    out.d_weight = 1.0;
    const double log_ft =
        lognormal_aft_logdensity(s.event_time, s.w_tte, p.tte_coef, p.tte_sd);
    out.loglik = std::log1p(-pi) + log_ft + ds.log_evidence;
    out.loglik_se2 = ds.log_evidence_se2;
  } else {
    const StableSubjectKernel stable_kernel(s, p);
    out.has_stable = true;
    out.stable = stable_kernel.posterior();
    out.stable_loglik = stable_kernel.marginal_loglik();
    out.responsibility =
        responsibility_from_logliks(pi, out.stable_loglik, ds.log_evidence, s.id);
    out.d_weight = 1.0 - out.responsibility;

    const double la = std::log(pi) + out.stable_loglik;
    const double lb = std::log1p(-pi) + ds.log_evidence;
    const double m = std::max(la, lb);
    out.loglik = m + std::log(std::exp(la - m) + std::exp(lb - m));
    out.loglik_se2 = out.d_weight * out.d_weight * ds.log_evidence_se2;
  }

  fold_draws(s, ds, out);
  return out;
}

EStepResult run_estep(const StudyDataset& data, const ModelParameters& p,
                      const FitConfig& config, int iteration, int draws) {
  const std::size_t n = data.subjects.size();
  EStepResult res;
  res.subjects.resize(n);
  res.draws = draws;

  parallel_for(n, config.threads, [&](std::size_t i) {
    const SubjectData& s = data.subjects[i];
    Rng rng = Rng::stream(config.seed, fnv1a64(s.id), static_cast<std::uint64_t>(iteration),
                          stream_purpose::kEStep ^ config.stream_salt);
    res.subjects[i] =
        estep_subject(s, p, draws, config.ess_floor_frac, config.ess_redraw_factor, rng);
  });

  std::vector<double> ess(n);
  for (std::size_t i = 0; i < n; ++i) {
    res.loglik += res.subjects[i].loglik;
    res.loglik_se2 += res.subjects[i].loglik_se2;
    ess[i] = res.subjects[i].ess;
  }
  std::sort(ess.begin(), ess.end());
  if (n > 0) {
    res.min_ess = ess.front();
    res.median_ess = n % 2 == 1 ? ess[n / 2] : 0.5 * (ess[n / 2 - 1] + ess[n / 2]);
  }
  return res;
}

}  // namespace cpcure
