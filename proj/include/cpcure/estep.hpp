#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "cpcure/data_model.hpp"
#include "cpcure/model_components.hpp"
#include "cpcure/rng.hpp"

namespace cpcure {

// One self-normalized importance draw of the latent variables for a subject
// under the change-point branch.
struct WeightedDraw {
  double t_star;      // log event time: log(observed time) for events, sampled otherwise
  double omega;       // change point on the time scale, in (0, exp(t_star)]
  double weight;      // normalized; a subject's weights sum to 1
  BPosterior b_post;  // random-effect posterior given this draw's omega
};

// Draws plus the evidence they estimate and weight diagnostics.
struct DrawSet {
  std::vector<WeightedDraw> draws;
  double log_evidence = 0.0;
  double ess = 0.0;               // effective sample size 1 / sum(w^2), in (0, K]
  double log_evidence_se2 = 0.0;  // MC variance of log_evidence: sum(w^2) - 1/K
};

// Log-space mixing of the two group evidences for one censored subject:
// returns P(stable | data) given log P(y | stable) and
// log P(T > t, y | change-point). Errors if both evidences are -inf.
double responsibility_from_logliks(double stable_rate, double log_stable, double log_cp,
                                   const std::string& subject_id = "");

// Same, computing the stable-group marginal internally; evidence_cp comes
// from censored_expectations().log_evidence. Event subjects short-circuit to
// zero before ever calling this.
double responsibility(const SubjectData& s, const ModelParameters& p, double evidence_cp);

// Event subjects (event observed at t_i): draws omega from its conditional
// prior given t* = log t_i, weighted by f(y | omega). exp(log_evidence)
// estimates f(y | t_i, change-point) = integral f(y|w) f(w|t*) dw.
DrawSet event_expectations(const SubjectData& s, const ModelParameters& p, int K, Rng& rng);

// Censored subjects: t* from the log-scale AFT law conditioned on t* > log t_i,
// then omega given t*; weights f(y | omega). log_evidence estimates
// log P(T > t_i, y | change-point), i.e. the survival factor is included.
DrawSet censored_expectations(const SubjectData& s, const ModelParameters& p, int K, Rng& rng);

// Per-subject E-step output, folded into the sufficient statistics the
// M-step consumes. Expectations marked E[.] are self-normalized importance
// estimates over the change-point branch.
struct SubjectEStep {
  double responsibility = 0.0;  // E[stable indicator]; exactly 0 for events
  double d_weight = 1.0;        // event ? 1 : 1 - responsibility
  double loglik = 0.0;          // subject's observed-data log-likelihood estimate
  double loglik_se2 = 0.0;      // MC variance of that estimate
  double ess = 0.0;
  int draws_used = 0;

  // Change-point block.
  double m1_logt = 0.0;         // E[t*]
  double m2_logt = 0.0;         // E[t*^2]
  Eigen::VectorXd zb_mean;      // E[Z(omega) b], one entry per visit
  double zb_sq = 0.0;           // E[b' Z(omega)' Z(omega) b], trace term included
  Eigen::Vector4d r_mean = Eigen::Vector4d::Zero();    // E[(omega, b)]
  Eigen::Matrix4d r_second = Eigen::Matrix4d::Zero();  // E[(omega,b)(omega,b)']
  // Truncation bounds exp(t*) paired with their weights; events collapse to
  // the single pair (t_i, 1).
  std::vector<std::pair<double, double>> trunc_bounds;

  // Stable block, populated for censored subjects only.
  bool has_stable = false;
  StablePosterior stable{Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero()};
  double stable_loglik = 0.0;
};

struct EStepResult {
  std::vector<SubjectEStep> subjects;
  double loglik = 0.0;      // sum of subject log-likelihood estimates
  double loglik_se2 = 0.0;  // sum of their MC variances
  double min_ess = 0.0;
  double median_ess = 0.0;
  int draws = 0;  // K before any ESS-triggered redraw
};

// Runs the full E-step for one subject: dispatches on event status, applies
// the ESS redraw rule (fewer than ess_floor_frac * K effective draws =>
// one redraw with ess_redraw_factor * K), and folds the draws into
// SubjectEStep. The caller provides the subject's dedicated rng stream.
SubjectEStep estep_subject(const SubjectData& s, const ModelParameters& p, int K,
                           double ess_floor_frac, int ess_redraw_factor, Rng& rng);

// Whole-dataset E-step: subject-parallel, deterministic for any thread count
// (per-subject streams keyed by subject id, iteration, and salt; ordered
// reduction). `draws` is this iteration's K.
EStepResult run_estep(const StudyDataset& data, const ModelParameters& p,
                      const FitConfig& config, int iteration, int draws);

}  // namespace cpcure
