#include "cpcure/mcem.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpcure/estep.hpp"
#include "cpcure/model_components.hpp"
#include "cpcure/mstep.hpp"
#include "cpcure/rng.hpp"
#include "cpcure/util.hpp"

namespace cpcure {
namespace {

constexpr double kMinInitScale = 1e-2;  // floor for starting noise scales
constexpr double kMinInitVar = 1e-3;    // floor for starting random-effect variances
constexpr double kFallbackVar = 0.1;    // used when the crude scatter is unavailable

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (const double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

// Spread of the crude per-subject estimates, measured robustly (squared
// normalized MAD) so a handful of ill-conditioned fits cannot swamp the
// starting variances.  Falls back to the sample variance when the central
// spread degenerates to zero.
double robust_variance(const std::vector<double>& v) {
  std::vector<double> dev(v.size());
  const double med = median(v);
  for (std::size_t i = 0; i < v.size(); ++i) dev[i] = std::abs(v[i] - med);
  const double mad = median(std::move(dev));
  if (mad <= 0.0) return sample_variance(v);
  const double sd = mad / 0.6744897501960817;  // Gaussian-consistent scaling
  return sd * sd;
}

double init_variance(const std::vector<double>& crude) {
  if (crude.size() < 2) return kFallbackVar;
  return std::max(kMinInitVar, 0.25 * robust_variance(crude));
}

// Index of the lowest outcome; the first one on ties so the result does not
// depend on scan order.
int nadir_index(const Eigen::VectorXd& y) {
  int best = 0;
  for (int j = 1; j < y.size(); ++j)
    if (y(j) < y(best)) best = j;
  return best;
}

}  // namespace

ModelParameters initialize_params(const StudyDataset& data, bool baseline_mode) {
  data.validate();
  const int p_long = data.p_long();
  const int p_stable = data.p_stable();
  const int q = data.q_tte();

  std::vector<const SubjectData*> events, censored;
  for (const auto& s : data.subjects) (s.event ? events : censored).push_back(&s);

  ModelParameters p;

  // Event-time block: least squares on log event times.
  if (events.empty()) {
    if (baseline_mode)
      fail("initialize_params: every subject is censored; the event-time block is "
           "unidentifiable in change-point-only mode");
    p.tte_coef = Eigen::VectorXd::Zero(q);
    p.tte_sd = 1.0;
  } else {
    Eigen::MatrixXd w(events.size(), q);
    Eigen::VectorXd logt(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
      w.row(i) = events[i]->w_tte.transpose();
      logt(i) = events[i]->log_event_time();
    }
    p.tte_coef = q > 0 ? Eigen::VectorXd(w.colPivHouseholderQr().solve(logt))
                       : Eigen::VectorXd(0);
    const double rss = (logt - w * p.tte_coef).squaredNorm();
    p.tte_sd = std::max(kMinInitScale, std::sqrt(rss / static_cast<double>(events.size())));
  }

  // Fixed effects for the change-point outcome model: pooled least squares
  // with an intercept (the intercept itself belongs to the random effects
  // and is discarded). Event subjects are certain members of the group, so
  // they are preferred; with no events everything is pooled.
  const auto& beta_pool = events.empty() ? censored : events;
  long pool_obs = 0;
  for (const auto* s : beta_pool) pool_obs += s->n_visits();
  Eigen::MatrixXd xd(pool_obs, 1 + p_long);
  Eigen::VectorXd yd(pool_obs);
  {
    long r = 0;
    for (const auto* s : beta_pool)
      for (int j = 0; j < s->n_visits(); ++j, ++r) {
        xd(r, 0) = 1.0;
        xd.block(r, 1, 1, p_long) = s->x_long.row(j);
        yd(r) = s->y(j);
      }
  }
  const Eigen::VectorXd pooled = xd.colPivHouseholderQr().solve(yd);
  p.long_coef = pooled.tail(p_long);
  const double pooled_resid_var =
      (yd - xd * pooled).squaredNorm() / static_cast<double>(std::max<long>(1, pool_obs - 1));

  // Crude change-point block from event subjects: the nadir visit supplies a
  // per-subject change point; a two-piece fit at those nadirs supplies the
  // random-effect means; per-subject refits supply scatter for the
  // covariance diagonal and pooled residuals for the noise scale.
  std::vector<double> omega_hat;
  std::vector<double> b_hat[3];
  double piece_rss = 0.0;
  long piece_dof = 0;
  long cp_rows = 0;
  for (const auto* s : events) cp_rows += s->n_visits();
  Eigen::MatrixXd zd(cp_rows, 3);
  Eigen::VectorXd rd(cp_rows);
  {
    long r = 0;
    for (const auto* s : events) {
      const int idx = nadir_index(s->y);
      const double om = s->visit_times(idx);
      omega_hat.push_back(om);
      const Eigen::VectorXd resid = s->y - s->x_long * p.long_coef;
      const Eigen::MatrixXd z = piecewise_design(s->visit_times, om);
      zd.block(r, 0, s->n_visits(), 3) = z;
      rd.segment(r, s->n_visits()) = resid;
      r += s->n_visits();

      const int n = s->n_visits();
      if (n >= 3 && idx >= 1 && idx <= n - 2) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
        if (qr.rank() == 3) {
          const Eigen::Vector3d b = qr.solve(resid);
          for (int k = 0; k < 3; ++k) b_hat[k].push_back(b(k));
          if (n >= 4) {
            piece_rss += (resid - z * b).squaredNorm();
            piece_dof += n - 3;
          }
        }
      }
    }
  }

  Eigen::Vector3d mu_b(0.0, 0.0, 0.0);
  if (cp_rows > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(zd);
    if (qr.rank() == 3) {
      mu_b = qr.solve(rd);
    } else {
      mu_b(0) = rd.mean();
    }
  }
  const double mu_omega =
      !omega_hat.empty() ? median(omega_hat) : [&] {
        std::vector<double> last;
        for (const auto& s : data.subjects) last.push_back(s.visit_times(s.n_visits() - 1));
        return 0.5 * median(last);
      }();
  p.re_mean << mu_omega, mu_b(0), mu_b(1), mu_b(2);
  p.re_cov.setZero();
  p.re_cov(0, 0) = init_variance(omega_hat);
  for (int k = 0; k < 3; ++k) p.re_cov(k + 1, k + 1) = init_variance(b_hat[k]);

  p.long_sd = piece_dof >= 1
                  ? std::max(kMinInitScale, std::sqrt(piece_rss / static_cast<double>(piece_dof)))
                  : std::max(kMinInitScale, std::sqrt(pooled_resid_var));

  // Stable block from censored subjects' trajectories: pooled straight-line
  // fit for the means, per-subject lines for scatter and noise.
  if (!censored.empty()) {
    long rows = 0;
    for (const auto* s : censored) rows += s->n_visits();
    Eigen::MatrixXd sd(rows, 2 + p_stable);
    Eigen::VectorXd sy(rows);
    long r = 0;
    for (const auto* s : censored)
      for (int j = 0; j < s->n_visits(); ++j, ++r) {
        sd(r, 0) = 1.0;
        sd(r, 1) = s->visit_times(j);
        sd.block(r, 2, 1, p_stable) = s->x_stable.row(j);
        sy(r) = s->y(j);
      }
    const Eigen::VectorXd coef = sd.colPivHouseholderQr().solve(sy);
    p.stable_re_mean << coef(0), coef(1);
    p.stable_long_coef = coef.tail(p_stable);

    std::vector<double> line_int, line_slope;
    double line_rss = 0.0;
    long line_dof = 0;
    for (const auto* s : censored) {
      const int n = s->n_visits();
      if (n < 2) continue;
      Eigen::MatrixXd ld(n, 2);
      ld.col(0).setOnes();
      ld.col(1) = s->visit_times;
      const Eigen::VectorXd resid = s->y - s->x_stable * p.stable_long_coef;
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ld);
      if (qr.rank() < 2) continue;
      const Eigen::Vector2d c = qr.solve(resid);
      line_int.push_back(c(0));
      line_slope.push_back(c(1));
      if (n >= 3) {
        line_rss += (resid - ld * c).squaredNorm();
        line_dof += n - 2;
      }
    }
    p.stable_re_cov.setZero();
    p.stable_re_cov(0, 0) = init_variance(line_int);
    p.stable_re_cov(1, 1) = init_variance(line_slope);
    p.stable_long_sd =
        line_dof >= 1
            ? std::max(kMinInitScale, std::sqrt(line_rss / static_cast<double>(line_dof)))
            : p.long_sd;
  } else {
    p.stable_re_mean.setZero();
    p.stable_re_cov = 0.04 * Eigen::Matrix2d::Identity();
    p.stable_long_coef = Eigen::VectorXd::Zero(p_stable);
    p.stable_long_sd = p.long_sd;
  }

  const double censor_frac =
      static_cast<double>(censored.size()) / static_cast<double>(data.n_subjects());
  p.stable_rate = baseline_mode ? 0.0 : 0.5 * censor_frac;

  p.validate();
  return p;
}

LoglikEstimate observed_loglik(const StudyDataset& data, const ModelParameters& params, int K,
                               std::uint64_t seed, std::uint64_t stream_salt, int threads) {
  data.validate();
  params.validate();
  if (K < 1) fail("observed_loglik: draw count must be at least 1");
  if (threads < 1) fail("observed_loglik: threads must be at least 1");

  const std::size_t n = data.subjects.size();
  std::vector<double> ll(n), se2(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const SubjectData& s = data.subjects[i];
    Rng rng =
        Rng::stream(seed, fnv1a64(s.id), 0, stream_purpose::kMonitor ^ stream_salt);
    const SubjectEStep est = estep_subject(s, params, K, 0.0, 1, rng);
    ll[i] = est.loglik;
    se2[i] = est.loglik_se2;
  });

  std::string flagged;
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(ll[i])) {
      if (!flagged.empty()) flagged += ", ";
      flagged += "'" + data.subjects[i].id + "'";
    }
  if (!flagged.empty())
    fail("observed_loglik: zero likelihood for subjects " + flagged +
         "; parameters are incompatible with their data");

  LoglikEstimate out;
  double total_se2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.value += ll[i];
    total_se2 += se2[i];
  }
  out.se = std::sqrt(total_se2);
  return out;
}

namespace {

double max_rel_change(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    worst = std::max(worst, std::abs(a[k] - b[k]) / std::max(1.0, std::abs(a[k])));
  return worst;
}

// Latest three-iteration moving-average step of the likelihood trace,
// compared against twice the Monte Carlo standard error of that step.
// Vacuously true until four entries exist.
bool loglik_trend_ok(const std::vector<double>& trace, const std::vector<double>& se2) {
  const std::size_t m = trace.size();
  if (m < 4) return true;
  const double diff = (trace[m - 1] - trace[m - 4]) / 3.0;
  const double threshold = 2.0 * std::sqrt(se2[m - 1] + se2[m - 4]) / 3.0;
  return diff >= -threshold;
}

void check_fit_config(const FitConfig& config) {
  if (config.max_em_iter < 1) fail("fit: max_em_iter must be at least 1");
  if (!(config.rel_tol > 0.0)) fail("fit: rel_tol must be positive");
  if (config.threads < 1) fail("fit: threads must be at least 1");
  if (config.fixed_draws < 0) fail("fit: fixed_draws cannot be negative");
  if (config.fixed_draws == 0) {
    if (config.schedule.initial < 1 || config.schedule.growth < 1.0 ||
        config.schedule.cap < config.schedule.initial)
      fail("fit: the draw schedule must start at one or more draws and never shrink");
  }
  if (!(config.ess_floor_frac >= 0.0 && config.ess_floor_frac < 1.0))
    fail("fit: ess_floor_frac must lie in [0, 1)");
  if (config.ess_redraw_factor < 1) fail("fit: ess_redraw_factor must be at least 1");
}

}  // namespace

FitResult fit(const StudyDataset& data, const FitConfig& config) {
  data.validate();
  check_fit_config(config);

  ModelParameters cur;
  if (config.warm_start.has_value()) {
    cur = *config.warm_start;
    if (cur.tte_coef.size() != data.q_tte() || cur.long_coef.size() != data.p_long() ||
        cur.stable_long_coef.size() != data.p_stable())
      fail("fit: warm start dimensions do not match the dataset");
    if (config.baseline_mode) cur.stable_rate = 0.0;
    cur.validate();
  } else {
    cur = initialize_params(data, config.baseline_mode);
  }

  FitResult res;
  res.seed = config.seed;
  FitDiagnostics& diag = res.diagnostics;

  MStepOptions mopts;
  mopts.baseline_mode = config.baseline_mode;

  std::vector<double> trace, trace_se2, change;
  int executed = 0;
  bool converged = false;

  for (int it = 0; it < config.max_em_iter; ++it) {
    const int K = config.fixed_draws > 0 ? config.fixed_draws : config.schedule.at(it);
    EStepResult e_step;
    MStepResult m_step;
    try {
      e_step = run_estep(data, cur, config, it, K);
      m_step = run_mstep(data, e_step.subjects, cur, mopts);
    } catch (const Error& err) {
      fail("fit iteration " + std::to_string(it + 1) + ": " + err.what());
    }

    if (it == 0) {
      diag.initial_loglik = e_step.loglik;
    } else {
      trace.push_back(e_step.loglik);
      trace_se2.push_back(e_step.loglik_se2);
      diag.loglik_se.push_back(std::sqrt(e_step.loglik_se2));
    }
    diag.min_ess.push_back(e_step.min_ess);
    diag.median_ess.push_back(e_step.median_ess);
    diag.draws.push_back(K);
    for (const auto& w : m_step.warnings)
      diag.warnings.push_back("iteration " + std::to_string(it + 1) + ": " + w);

    const double d = max_rel_change(flatten(cur), flatten(m_step.params));
    change.push_back(d);
    diag.max_rel_change.push_back(d);
    cur = m_step.params;
    executed = it + 1;

    if (it >= 2 && change[it] < config.rel_tol && change[it - 1] < config.rel_tol &&
        change[it - 2] < config.rel_tol && loglik_trend_ok(trace, trace_se2)) {
      converged = true;
      break;
    }
  }

  const int k_last =
      config.fixed_draws > 0 ? config.fixed_draws : config.schedule.at(executed - 1);
  LoglikEstimate final_ll;
  try {
    final_ll = observed_loglik(data, cur, k_last, config.seed, config.stream_salt,
                               config.threads);
  } catch (const Error& err) {
    fail(std::string("fit: final likelihood evaluation: ") + err.what());
  }
  trace.push_back(final_ll.value);
  diag.loglik_se.push_back(final_ll.se);

  if (!converged)
    diag.warnings.push_back("stopped at the iteration cap (" +
                            std::to_string(config.max_em_iter) +
                            ") without meeting the convergence criteria");

  res.params = cur;
  res.loglik_trace = std::move(trace);
  res.converged = converged;
  res.iterations_used = executed;
  return res;
}

}  // namespace cpcure
