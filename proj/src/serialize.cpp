#include <initializer_list>
#include <string>
#include <vector>

#include "cpcure/io.hpp"
#include "cpcure/util.hpp"

namespace cpcure {

namespace {

using nlohmann::json;

// Strict-object guard: every key must be in the allowed list.
void require_known_keys(const json& j, std::initializer_list<const char*> allowed,
                        const std::string& where) {
  if (!j.is_object()) fail(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) fail(where + ": unknown field '" + it.key() + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(where + ": field '" + std::string(key) + "' is malformed: " + e.what());
  }
}

}  // namespace

json fit_config_to_json(const FitConfig& c) {
  json j;
  j["baseline_mode"] = c.baseline_mode;
  j["max_em_iter"] = c.max_em_iter;
  j["rel_tol"] = c.rel_tol;
  j["schedule"] = {{"initial", c.schedule.initial},
                   {"growth", c.schedule.growth},
                   {"every", c.schedule.every},
                   {"cap", c.schedule.cap}};
  j["ess_floor_frac"] = c.ess_floor_frac;
  j["ess_redraw_factor"] = c.ess_redraw_factor;
  j["fixed_draws"] = c.fixed_draws;
  j["seed"] = c.seed;
  j["stream_salt"] = c.stream_salt;
  j["threads"] = c.threads;
  if (c.warm_start.has_value()) j["warm_start"] = params_to_json(*c.warm_start);
  return j;
}

FitConfig fit_config_from_json(const json& j) {
  const std::string where = "fit config";
  require_known_keys(j,
                     {"baseline_mode", "max_em_iter", "rel_tol", "schedule", "ess_floor_frac",
                      "ess_redraw_factor", "fixed_draws", "seed", "stream_salt", "threads",
                      "warm_start"},
                     where);
  FitConfig c;
  read_field(j, "baseline_mode", c.baseline_mode, where);
  read_field(j, "max_em_iter", c.max_em_iter, where);
  read_field(j, "rel_tol", c.rel_tol, where);
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    require_known_keys(s, {"initial", "growth", "every", "cap"}, where + ".schedule");
    read_field(s, "initial", c.schedule.initial, where + ".schedule");
    read_field(s, "growth", c.schedule.growth, where + ".schedule");
    read_field(s, "every", c.schedule.every, where + ".schedule");
    read_field(s, "cap", c.schedule.cap, where + ".schedule");
  }
  read_field(j, "ess_floor_frac", c.ess_floor_frac, where);
  read_field(j, "ess_redraw_factor", c.ess_redraw_factor, where);
  read_field(j, "fixed_draws", c.fixed_draws, where);
  read_field(j, "seed", c.seed, where);
  read_field(j, "stream_salt", c.stream_salt, where);
  read_field(j, "threads", c.threads, where);
  if (j.contains("warm_start")) c.warm_start = params_from_json(j.at("warm_start"));
  return c;
}

json sim_config_to_json(const SimConfig& c) {
  json j;
  j["truth"] = params_to_json(c.truth);
  j["n"] = c.n;
  j["censor_rate"] = c.censor_rate;
  j["visit_spacing"] = c.visit_spacing;
  j["visit_noise_sd"] = c.visit_noise_sd;
  j["max_visits"] = c.max_visits;
  j["replications"] = c.replications;
  j["seed"] = c.seed;
  return j;
}

SimConfig sim_config_from_json(const json& j) {
  const std::string where = "simulation config";
  require_known_keys(j,
                     {"truth", "n", "censor_rate", "visit_spacing", "visit_noise_sd",
                      "max_visits", "replications", "seed"},
                     where);
  SimConfig c;
  c.truth = default_benchmark_truth();
  if (j.contains("truth")) c.truth = params_from_json(j.at("truth"));
  read_field(j, "n", c.n, where);
  read_field(j, "censor_rate", c.censor_rate, where);
  read_field(j, "visit_spacing", c.visit_spacing, where);
  read_field(j, "visit_noise_sd", c.visit_noise_sd, where);
  read_field(j, "max_visits", c.max_visits, where);
  read_field(j, "replications", c.replications, where);
  read_field(j, "seed", c.seed, where);
  return c;
}

json fit_result_to_json(const FitResult& r) {
  json j;
  j["params"] = params_to_json(r.params);
  j["converged"] = r.converged;
  j["iterations_used"] = r.iterations_used;
  j["seed"] = r.seed;
  j["loglik_trace"] = r.loglik_trace;
  j["diagnostics"] = {{"initial_loglik", r.diagnostics.initial_loglik},
                      {"loglik_se", r.diagnostics.loglik_se},
                      {"min_ess", r.diagnostics.min_ess},
                      {"median_ess", r.diagnostics.median_ess},
                      {"draws", r.diagnostics.draws},
                      {"max_rel_change", r.diagnostics.max_rel_change},
                      {"warnings", r.diagnostics.warnings}};
  return j;
}

FitResult fit_result_from_json(const json& j) {
  const std::string where = "fit result";
  // Extra sibling fields (design means, schema tags) are the caller's
  // business; only the known blocks are read.
  FitResult r;
  try {
    r.params = params_from_json(j.at("params"));
    r.converged = j.at("converged").get<bool>();
    r.iterations_used = j.at("iterations_used").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    read_field(j, "loglik_trace", r.loglik_trace, where);
    if (j.contains("diagnostics")) {
      const json& d = j.at("diagnostics");
      require_known_keys(d,
                         {"initial_loglik", "loglik_se", "min_ess", "median_ess", "draws",
                          "max_rel_change", "warnings"},
                         where + ".diagnostics");
      read_field(d, "initial_loglik", r.diagnostics.initial_loglik, where);
      read_field(d, "loglik_se", r.diagnostics.loglik_se, where);
      read_field(d, "min_ess", r.diagnostics.min_ess, where);
      read_field(d, "median_ess", r.diagnostics.median_ess, where);
      read_field(d, "draws", r.diagnostics.draws, where);
      read_field(d, "max_rel_change", r.diagnostics.max_rel_change, where);
      read_field(d, "warnings", r.diagnostics.warnings, where);
    }
  } catch (const json::exception& e) {
    fail(where + ": " + e.what());
  }
  return r;
}

json bootstrap_result_to_json(const BootstrapResult& b) {
  json j;
  json reps = json::array();
  for (const BootstrapReplicate& r : b.replicates) {
    json rep;
    rep["params"] = params_to_json(r.params);
    rep["means"] = design_means_to_json(r.means);
    rep["converged"] = r.converged;
    rep["errored"] = r.errored;
    rep["error"] = r.error;
    reps.push_back(std::move(rep));
  }
  j["replicates"] = std::move(reps);
  j["ci_lower"] = params_to_json(b.ci_lower);
  j["ci_upper"] = params_to_json(b.ci_upper);
  j["failures"] = b.failures;
  j["warnings"] = b.warnings;
  return j;
}

BootstrapResult bootstrap_result_from_json(const json& j) {
  const std::string where = "bootstrap result";
  BootstrapResult b;
  try {
    for (const json& rep : j.at("replicates")) {
      require_known_keys(rep, {"params", "means", "converged", "errored", "error"},
                         where + ".replicates[]");
      BootstrapReplicate r;
      r.params = params_from_json(rep.at("params"));
      r.means = design_means_from_json(rep.at("means"));
      r.converged = rep.at("converged").get<bool>();
      r.errored = rep.at("errored").get<bool>();
      r.error = rep.at("error").get<std::string>();
      b.replicates.push_back(std::move(r));
    }
    b.ci_lower = params_from_json(j.at("ci_lower"));
    b.ci_upper = params_from_json(j.at("ci_upper"));
    b.failures = j.at("failures").get<int>();
    read_field(j, "warnings", b.warnings, where);
  } catch (const json::exception& e) {
    fail(where + ": " + e.what());
  }
  return b;
}

}  // namespace cpcure
