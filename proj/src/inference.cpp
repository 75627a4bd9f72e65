#include "cpcure/inference.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <Eigen/Dense>

#include "cpcure/distributions.hpp"
#include "cpcure/rng.hpp"
#include "cpcure/util.hpp"

namespace cpcure {

std::pair<double, double> percentile_bounds(std::vector<double> values) {
  if (values.empty()) fail("percentile_bounds: no values");
  std::sort(values.begin(), values.end());
  const double m = static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(0.025 * m));
  const auto hi = static_cast<std::size_t>(std::ceil(0.975 * m));
  return {values[lo], values[hi]};
}

namespace {

StudyDataset resample_subjects(const StudyDataset& data, Rng& rng) {
  const int n = data.n_subjects();
  StudyDataset out;
  out.subjects.reserve(n);
  std::unordered_map<std::uint64_t, int> seen;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t idx = rng.uniform_index(static_cast<std::uint64_t>(n));
    const int occurrence = ++seen[idx];
    SubjectData s = data.subjects[static_cast<std::size_t>(idx)];
    // Renaming keeps ids unique and gives each copy of a subject its own
    // draw streams instead of a shared (and thus understated) one.
    s.id += "#" + std::to_string(occurrence);
    out.subjects.push_back(std::move(s));
  }
  return out;
}

std::uint64_t replicate_salt(std::uint64_t base, int b) {
  return mix64(mix64(base ^ stream_purpose::kBootstrap) + static_cast<std::uint64_t>(b) + 1);
}

bool usable(const BootstrapReplicate& r) { return r.converged && !r.errored; }

}  // namespace

BootstrapResult bootstrap(const StudyDataset& data, const FitConfig& config, int B) {
  data.validate();
  if (B < 2) fail("bootstrap: needs at least two replicates");

  BootstrapResult res;
  res.replicates.resize(B);
  for (int b = 0; b < B; ++b) {
    Rng resample_rng = Rng::stream(config.seed, stream_purpose::kBootstrap,
                                   static_cast<std::uint64_t>(b), config.stream_salt);
    const StudyDataset replicate_data = resample_subjects(data, resample_rng);
    FitConfig replicate_config = config;
    replicate_config.stream_salt = replicate_salt(config.stream_salt, b);
    BootstrapReplicate& rep = res.replicates[b];
    rep.means = design_means(replicate_data);
    try {
      FitResult f = fit(replicate_data, replicate_config);
      rep.params = f.params;
      rep.converged = f.converged;
    } catch (const Error& e) {
      rep.errored = true;
      rep.error = e.what();
      res.warnings.push_back("replicate " + std::to_string(b + 1) + " failed: " + e.what());
    }
  }

  std::vector<const ModelParameters*> good;
  for (const auto& rep : res.replicates)
    if (usable(rep)) good.push_back(&rep.params);
  res.failures = B - static_cast<int>(good.size());
  if (good.empty())
    fail("bootstrap: every replicate failed to converge; intervals are unavailable");
  if (res.failures * 5 > B)
    res.warnings.push_back("bootstrap: " + std::to_string(res.failures) + " of " +
                           std::to_string(B) +
                           " replicates failed; intervals rest on the remainder");

  const std::size_t p = flatten(*good.front()).size();
  std::vector<std::vector<double>> columns(p);
  for (const ModelParameters* params : good) {
    const std::vector<double> flat = flatten(*params);
    for (std::size_t k = 0; k < p; ++k) columns[k].push_back(flat[k]);
  }
  std::vector<double> lo(p), hi(p);
  for (std::size_t k = 0; k < p; ++k) {
    const auto bounds = percentile_bounds(columns[k]);
    lo[k] = bounds.first;
    hi[k] = bounds.second;
  }
  res.ci_lower = unflatten(lo, data.p_long(), data.p_stable(), data.q_tte());
  res.ci_upper = unflatten(hi, data.p_long(), data.p_stable(), data.q_tte());
  return res;
}

TrajectoryEstimate marginal_trajectory(const ModelParameters& params, const DesignMeans& means,
                                       const std::vector<double>& grid, int J,
                                       std::uint64_t seed, std::uint64_t stream_salt) {
  params.validate();
  if (grid.empty()) fail("marginal_trajectory: empty grid");
  if (J < 1) fail("marginal_trajectory: needs at least one draw");
  if (means.x_long.size() != params.long_coef.size() ||
      means.x_stable.size() != params.stable_long_coef.size() ||
      means.w_tte.size() != params.tte_coef.size())
    fail("marginal_trajectory: design means do not match the parameter dimensions");

  const std::size_t g = grid.size();
  std::vector<double> sum(g, 0.0), sum_sq(g, 0.0);
  Rng rng = Rng::stream(seed, stream_purpose::kTrajectory, stream_salt);
  const PtmvnSampler sampler(params.re_mean, params.re_cov);
  const double mu_log_t = means.w_tte.dot(params.tte_coef);
  for (int j = 0; j < J; ++j) {
    const double log_t = mu_log_t + params.tte_sd * rng.normal();
    const Eigen::Vector4d r = sampler.sample(std::exp(log_t), rng);
    for (std::size_t k = 0; k < g; ++k) {
      const double dt = grid[k] - r(0);
      const double v = r(1) + (dt <= 0.0 ? r(2) : r(3)) * dt;
      sum[k] += v;
      sum_sq[k] += v * v;
    }
  }

  const double xb = means.x_long.dot(params.long_coef);
  const double xb_stable = means.x_stable.dot(params.stable_long_coef);
  const double pi = params.stable_rate;
  TrajectoryEstimate out;
  out.grid = grid;
  out.mean.resize(g);
  out.stable_mean.resize(g);
  out.cp_mean.resize(g);
  out.mc_se.resize(g);
  const double n = static_cast<double>(J);
  for (std::size_t k = 0; k < g; ++k) {
    const double avg = sum[k] / n;
    out.cp_mean[k] = xb + avg;
    out.stable_mean[k] =
        xb_stable + params.stable_re_mean(0) + params.stable_re_mean(1) * grid[k];
    out.mean[k] = pi * out.stable_mean[k] + (1.0 - pi) * out.cp_mean[k];
    const double var = std::max(0.0, sum_sq[k] / n - avg * avg);
    out.mc_se[k] = (1.0 - pi) * std::sqrt(var / n);
  }
  return out;
}

std::vector<double> average_treatment_effect(const TrajectoryEstimate& treat,
                                             const TrajectoryEstimate& control) {
  if (treat.grid.size() != control.grid.size())
    fail("average_treatment_effect: trajectory grids differ in length");
  for (std::size_t k = 0; k < treat.grid.size(); ++k)
    if (treat.grid[k] != control.grid[k])
      fail("average_treatment_effect: trajectory grids do not align");
  std::vector<double> diff(treat.grid.size());
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = treat.mean[k] - control.mean[k];
  return diff;
}

std::vector<std::vector<double>> replicate_trajectories(const BootstrapResult& boot,
                                                        const std::vector<double>& grid, int J,
                                                        std::uint64_t seed,
                                                        std::uint64_t salt_base) {
  std::vector<std::vector<double>> curves(boot.replicates.size());
  for (std::size_t b = 0; b < boot.replicates.size(); ++b) {
    const BootstrapReplicate& rep = boot.replicates[b];
    if (!usable(rep)) continue;
    curves[b] = marginal_trajectory(rep.params, rep.means, grid, J, seed,
                                    mix64(salt_base + b + 1))
                    .mean;
  }
  return curves;
}

namespace {

void band_from_curves(const std::vector<std::vector<double>>& curves,
                      std::vector<double>& lower, std::vector<double>& upper,
                      std::size_t g) {
  lower.assign(g, 0.0);
  upper.assign(g, 0.0);
  for (std::size_t k = 0; k < g; ++k) {
    std::vector<double> values;
    for (const auto& curve : curves)
      if (!curve.empty()) values.push_back(curve[k]);
    const auto bounds = percentile_bounds(values);
    lower[k] = bounds.first;
    upper[k] = bounds.second;
  }
}

void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) fail("trajectory_ci: empty grid");
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!(grid[k] > 0.0)) fail("trajectory_ci: grid times must be positive");
    if (k > 0 && !(grid[k] > grid[k - 1]))
      fail("trajectory_ci: grid times must be strictly increasing");
  }
}

}  // namespace

TrajectoryCiResult trajectory_ci(const std::vector<std::pair<std::string, StudyDataset>>& arms,
                                 const FitConfig& config, const TrajectoryCiOptions& options) {
  if (arms.empty() || arms.size() > 2)
    fail("trajectory_ci: expects one or two arms");
  check_grid(options.grid);
  if (options.draws < 1) fail("trajectory_ci: needs at least one trajectory draw");
  const std::vector<double>& grid = options.grid;
  const std::size_t g = grid.size();

  TrajectoryCiResult res;
  std::vector<std::vector<std::vector<double>>> curves_per_arm;
  for (const auto& [name, data] : arms) {
    FitConfig arm_config = config;
    arm_config.stream_salt = mix64(config.stream_salt ^ fnv1a64(name));

    ArmTrajectory arm;
    arm.name = name;
    arm.fit = fit(data, arm_config);
    if (!arm.fit.converged)
      res.warnings.push_back("arm '" + name + "': full-data fit did not converge");

    const DesignMeans means = design_means(data);
    arm.trajectory =
        marginal_trajectory(arm.fit.params, means, grid, options.draws, arm_config.seed,
                            mix64(arm_config.stream_salt ^ stream_purpose::kTrajectory));

    FitConfig replicate_config = options.replicate_config.value_or(config);
    replicate_config.stream_salt = arm_config.stream_salt;
    if (!replicate_config.warm_start.has_value())
      replicate_config.warm_start = arm.fit.params;
    const BootstrapResult boot = bootstrap(data, replicate_config, options.bootstrap_reps);
    for (const auto& w : boot.warnings)
      res.warnings.push_back("arm '" + name + "': " + w);
    arm.failures = boot.failures;

    const auto curves =
        replicate_trajectories(boot, grid, options.draws, replicate_config.seed,
                               mix64(arm_config.stream_salt ^ stream_purpose::kTrajectory));
    band_from_curves(curves, arm.trajectory.ci_lower, arm.trajectory.ci_upper, g);
    curves_per_arm.push_back(curves);
    res.arms.push_back(std::move(arm));
  }

  if (arms.size() == 2) {
    res.ate = average_treatment_effect(res.arms[0].trajectory, res.arms[1].trajectory);
    // Paired differences: replicate b of one arm against replicate b of the
    // other, dropping pairs where either side failed.
    std::vector<std::vector<double>> diff;
    const std::size_t B = curves_per_arm[0].size();
    for (std::size_t b = 0; b < B && b < curves_per_arm[1].size(); ++b) {
      if (curves_per_arm[0][b].empty() || curves_per_arm[1][b].empty()) continue;
      std::vector<double> d(g);
      for (std::size_t k = 0; k < g; ++k)
        d[k] = curves_per_arm[0][b][k] - curves_per_arm[1][b][k];
      diff.push_back(std::move(d));
    }
    if (diff.empty())
      fail("trajectory_ci: no bootstrap replicate converged in both arms");
    band_from_curves(diff, res.ate_lower, res.ate_upper, g);

    for (std::size_t k = 0; k < g; ++k) {
      const auto& a = res.arms[0].trajectory;
      const auto& c = res.arms[1].trajectory;
      if (a.ci_upper[k] < c.ci_lower[k] || c.ci_upper[k] < a.ci_lower[k]) {
        res.first_band_separation = grid[k];
        break;
      }
    }
    for (std::size_t k = 0; k < g; ++k)
      if (res.ate_upper[k] < 0.0) {
        res.first_ate_upper_below_zero = grid[k];
        break;
      }
  }
  return res;
}

}  // namespace cpcure
