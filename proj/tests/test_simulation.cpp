#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <doctest.h>

#include "cpcure/data_model.hpp"
#include "cpcure/inference.hpp"
#include "cpcure/rng.hpp"
#include "cpcure/simulation.hpp"
#include "cpcure/util.hpp"
#include "test_helpers.hpp"

using namespace cpcure;
using test_helpers::make_params;

namespace {

SimConfig make_config(double stable_rate, int n, std::uint64_t seed, double censor_rate = 0.5) {
  SimConfig cfg;
  cfg.truth = make_params();
  cfg.truth.stable_rate = stable_rate;
  cfg.n = n;
  cfg.censor_rate = censor_rate;
  cfg.seed = seed;
  return cfg;
}

DesignMeans means1(double x_long, double x_stable, double w) {
  DesignMeans m;
  m.x_long = Eigen::VectorXd::Constant(1, x_long);
  m.x_stable = Eigen::VectorXd::Constant(1, x_stable);
  m.w_tte = Eigen::VectorXd::Constant(1, w);
  return m;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (const double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_SUITE("simulation") {

TEST_CASE("visit schedule matches its closed-form moments") {
  // All-stable cohort with near-negligible dropout keeps the schedule
  // intact, so visit times are |spacing*j - z| with z half-normal. The fold
  // at zero carries ~1e-7 mass here, leaving mean spacing*j - sd*sqrt(2/pi)
  // and variance sd^2 (1 - 2/pi).
  SimConfig cfg = make_config(1.0, 4000, 11, /*censor_rate=*/0.01);
  const SimulatedCohort cohort = generate_dataset(cfg);

  std::vector<double> first, tenth;
  for (const auto& s : cohort.data.subjects) {
    if (s.n_visits() >= 2) first.push_back(s.visit_times(0));
    if (s.n_visits() >= 11) tenth.push_back(s.visit_times(9));
  }
  REQUIRE(first.size() > 3500);
  REQUIRE(tenth.size() > 3500);

  const double pi = std::acos(-1.0);
  const double jitter_mean = 0.02 * std::sqrt(2.0 / pi);
  const double jitter_sd = 0.02 * std::sqrt(1.0 - 2.0 / pi);

  const double tol1 = 3.0 * jitter_sd / std::sqrt(static_cast<double>(first.size()));
  CHECK(std::abs(mean_of(first) - (0.1 - jitter_mean)) < tol1);
  const double tol10 = 3.0 * jitter_sd / std::sqrt(static_cast<double>(tenth.size()));
  CHECK(std::abs(mean_of(tenth) - (1.0 - jitter_mean)) < tol10);

  // The spread separates half-normal jitter (sd ~ 0.0121) from full-normal
  // jitter (sd 0.02) and from no jitter at all.
  CHECK(sd_of(first) > 0.8 * jitter_sd);
  CHECK(sd_of(first) < 1.2 * jitter_sd);
}

TEST_CASE("generated cohorts keep the latent bookkeeping consistent") {
  SimConfig cfg = make_config(0.4, 400, 5);
  const SimulatedCohort cohort = generate_dataset(cfg);
  const double inf = std::numeric_limits<double>::infinity();

  REQUIRE(cohort.data.n_subjects() == 400);
  REQUIRE(cohort.labels.size() == 400);
  REQUIRE(cohort.progression_time.size() == 400);
  REQUIRE(cohort.re.size() == 400);
  REQUIRE(cohort.stable_re.size() == 400);
  cohort.data.validate();

  int n_stable = 0, n_cp = 0, n_event = 0;
  for (int i = 0; i < 400; ++i) {
    const SubjectData& s = cohort.data.subjects[i];
    CHECK(s.n_visits() >= 1);
    CHECK(s.n_visits() <= cfg.max_visits);
    CHECK(s.visit_times(s.n_visits() - 1) <= s.event_time);
    CHECK(s.visit_times(0) > 0.0);

    if (cohort.labels[i] == GroupLabel::kStable) {
      ++n_stable;
      CHECK_FALSE(s.event);
      CHECK(cohort.progression_time[i] == inf);
      CHECK(cohort.re[i].isZero(0.0));
      CHECK(cohort.stable_re[i].norm() > 0.0);
    } else {
      REQUIRE(cohort.labels[i] == GroupLabel::kChangePoint);
      ++n_cp;
      const double prog = cohort.progression_time[i];
      CHECK(prog < inf);
      // The change point lives in (0, progression time] by construction.
      CHECK(cohort.re[i](0) > 0.0);
      CHECK(cohort.re[i](0) <= prog);
      CHECK(cohort.stable_re[i].isZero(0.0));
      if (s.event) {
        ++n_event;
        CHECK(s.event_time == prog);  // observed exactly at progression
      } else {
        CHECK(s.event_time <= prog);  // censored strictly before it
      }
    }
  }
  // At a 40% stable fraction and moderate censoring, all subject kinds occur.
  CHECK(n_stable > 80);
  CHECK(n_cp > 150);
  CHECK(n_event > 50);
  CHECK(n_event < n_cp);
}

TEST_CASE("generation is reproducible and replications are distinct") {
  SimConfig cfg = make_config(0.3, 40, 9);
  const SimulatedCohort a = generate_dataset(cfg, 3);
  const SimulatedCohort b = generate_dataset(cfg, 3);

  REQUIRE(a.data.n_subjects() == b.data.n_subjects());
  for (int i = 0; i < a.data.n_subjects(); ++i) {
    const SubjectData& sa = a.data.subjects[i];
    const SubjectData& sb = b.data.subjects[i];
    CHECK(sa.id == sb.id);
    REQUIRE(sa.n_visits() == sb.n_visits());
    CHECK((sa.visit_times - sb.visit_times).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sa.y - sb.y).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sa.x_long - sb.x_long).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sa.w_tte - sb.w_tte).cwiseAbs().maxCoeff() == 0.0);
    CHECK(sa.event_time == sb.event_time);
    CHECK(sa.event == sb.event);
    CHECK(a.labels[i] == b.labels[i]);
    CHECK((a.re[i] - b.re[i]).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(a.regenerated == b.regenerated);

  const SimulatedCohort c = generate_dataset(cfg, 4);
  bool any_diff = false;
  for (int i = 0; i < a.data.n_subjects() && !any_diff; ++i)
    any_diff = a.data.subjects[i].y(0) != c.data.subjects[i].y(0);
  CHECK(any_diff);
}

TEST_CASE("heavy censoring trims visits without breaking the data contract") {
  SimConfig cfg = make_config(0.3, 300, 17, /*censor_rate=*/3.0);
  const SimulatedCohort cohort = generate_dataset(cfg);
  cohort.data.validate();

  int single_visit = 0;
  for (const auto& s : cohort.data.subjects) {
    CHECK(s.n_visits() >= 1);
    CHECK(s.visit_times(s.n_visits() - 1) <= s.event_time);
    if (s.n_visits() == 1) ++single_visit;
  }
  // Short follow-up makes one-visit subjects common and forces some redraws
  // (a follow-up ending before even the shrunk first visit).
  CHECK(single_visit > 20);
  CHECK(cohort.regenerated > 0);
}

TEST_CASE("degenerate simulation settings are rejected") {
  SimConfig cfg = make_config(0.3, 50, 1);
  CHECK_THROWS_AS(generate_dataset(cfg, -1), Error);

  SimConfig bad = cfg;
  bad.n = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.censor_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.visit_spacing = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.visit_noise_sd = -0.01;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.max_visits = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.replications = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.truth.long_coef = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("metric arithmetic matches hand-computed cases") {
  // Opposite errors cancel inside the absolute value, so bias is zero while
  // the squared error is not.
  const std::vector<double> truth{2.0};
  SimMetrics m = compute_metrics({{3.0}, {1.0}}, truth);
  CHECK(m.bias[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(m.mse[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::isnan(m.coverage[0]));

  m = compute_metrics({{2.0}, {2.0}, {2.0}}, truth);
  CHECK(m.bias[0] == 0.0);
  CHECK(m.mse[0] == 0.0);

  // Spreadsheet-style case with intervals.
  const std::vector<std::vector<double>> est{{1.2, -0.3}, {0.8, 0.1}, {1.3, -0.2}};
  const std::vector<double> truth2{1.0, 0.0};
  const std::vector<std::vector<double>> lo{{0.0, -1.0}, {0.0, -1.0}, {1.25, -0.05}};
  const std::vector<std::vector<double>> hi{{2.0, 1.0}, {1.0, 1.0}, {2.0, 0.05}};
  m = compute_metrics(est, truth2, &lo, &hi);
  CHECK(m.bias[0] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(m.mse[0] == doctest::Approx(0.17 / 3.0).epsilon(1e-12));
  CHECK(m.bias[1] == doctest::Approx(0.4 / 3.0).epsilon(1e-12));
  CHECK(m.mse[1] == doctest::Approx(0.14 / 3.0).epsilon(1e-12));
  CHECK(m.coverage[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m.coverage[1] == doctest::Approx(1.0).epsilon(1e-15));

  // mse >= bias^2 for arbitrary inputs, a consequence of Jensen's inequality.
  Rng rng = Rng::stream(33, 1);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::vector<double>> rows(5, std::vector<double>(3));
    for (auto& row : rows)
      for (double& v : row) v = 2.0 * rng.normal();
    const SimMetrics rm = compute_metrics(rows, {0.1, -0.2, 0.3});
    for (int k = 0; k < 3; ++k) CHECK(rm.mse[k] >= rm.bias[k] * rm.bias[k] - 1e-14);
  }

  CHECK_THROWS_AS(compute_metrics({}, truth), Error);
  CHECK_THROWS_AS(compute_metrics({{1.0, 2.0}}, truth), Error);
  CHECK_THROWS_AS(compute_metrics({{1.0}}, truth, &lo, nullptr), Error);
  const std::vector<std::vector<double>> one_lo{{0.0}};
  const std::vector<std::vector<double>> one_hi{{1.0}};
  CHECK_THROWS_AS(compute_metrics({{1.0}, {2.0}}, truth, &one_lo, &one_hi), Error);
  const std::vector<std::vector<double>> wide_lo{{0.0, 0.0}};
  const std::vector<std::vector<double>> wide_hi{{1.0, 1.0}};
  CHECK_THROWS_AS(compute_metrics({{1.0}}, truth, &wide_lo, &wide_hi), Error);
}

TEST_CASE("trajectory truth reduces to the stable line when everyone is stable") {
  ModelParameters truth = make_params();
  truth.stable_rate = 1.0;
  const DesignMeans means = means1(0.0, 2.0, 0.0);
  const std::vector<double> grid{0.0, 0.5, 1.0, 2.0};
  const TrajectoryTruth tt = simulate_trajectory_truth(truth, means, grid, 50000, 21);

  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double line = 2.0 * truth.stable_long_coef(0) + truth.stable_re_mean(0) +
                        truth.stable_re_mean(1) * grid[k];
    CHECK(tt.mc_se[k] > 0.0);
    CHECK(std::abs(tt.mean[k] - line) < 4.0 * tt.mc_se[k] + 1e-12);

    // The reported Monte Carlo error tracks the line's analytic scatter.
    const double s = grid[k];
    const double var = truth.stable_re_cov(0, 0) + 2.0 * s * truth.stable_re_cov(0, 1) +
                       s * s * truth.stable_re_cov(1, 1);
    const double se = std::sqrt(var / 50000.0);
    CHECK(tt.mc_se[k] > 0.8 * se);
    CHECK(tt.mc_se[k] < 1.25 * se);
  }

  CHECK_THROWS_AS(simulate_trajectory_truth(truth, means, {}, 100, 1), Error);
  CHECK_THROWS_AS(simulate_trajectory_truth(truth, means, grid, 0, 1), Error);
  DesignMeans bad = means;
  bad.w_tte = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(simulate_trajectory_truth(truth, bad, grid, 100, 1), Error);
}

TEST_CASE("trajectory truth agrees with the mixture evaluator") {
  // Two independently written Monte Carlo estimators of the same population
  // mean: Bernoulli group mixing with per-subject draws on one side, exact
  // mixture weights with shared draws on the other.
  const ModelParameters p = make_params();  // stable fraction 0.3
  const DesignMeans means = means1(0.4, -0.3, 0.6);
  const std::vector<double> grid{0.3, 0.8, 1.4, 2.0};

  const TrajectoryTruth tt = simulate_trajectory_truth(p, means, grid, 60000, 77);
  const TrajectoryEstimate mt = marginal_trajectory(p, means, grid, 60000, 1234, 5);

  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double tol = 4.0 * std::sqrt(tt.mc_se[k] * tt.mc_se[k] + mt.mc_se[k] * mt.mc_se[k]);
    CHECK(std::abs(tt.mean[k] - mt.mean[k]) < tol);
  }
}

}  // TEST_SUITE
