#include "cpcure/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cpcure/util.hpp"

namespace cpcure {

double SubjectData::log_event_time() const {
  if (!(event_time > 0.0))
    fail("subject '" + id + "': event time must be positive");
  return std::log(event_time);
}

void SubjectData::validate() const {
  const auto ctx = [this](const std::string& msg) { fail("subject '" + id + "': " + msg); };
  const int n = n_visits();
  if (n < 1) ctx("needs at least one visit");
  if (y.size() != n) ctx("outcome length does not match visit count");
  if (x_long.rows() != n) ctx("longitudinal covariate rows do not match visit count");
  if (x_stable.rows() != n) ctx("stable covariate rows do not match visit count");
  if (!(event_time > 0.0)) ctx("event time must be positive");
  if (!std::isfinite(event_time)) ctx("event time must be finite");
  for (int j = 0; j < n; ++j) {
    if (!std::isfinite(visit_times(j)) || !std::isfinite(y(j)))
      ctx("non-finite visit time or outcome");
    if (visit_times(j) < 0.0) ctx("negative visit time");
    if (j > 0 && !(visit_times(j) > visit_times(j - 1)))
      ctx("visit times must be strictly increasing");
    if (visit_times(j) > event_time)
      ctx("visit at time " + std::to_string(visit_times(j)) +
          " falls after the follow-up end " + std::to_string(event_time));
  }
  if (!x_long.allFinite() || !x_stable.allFinite() || !w_tte.allFinite())
    ctx("non-finite covariate value");
  // The model carries baseline covariates only; time-varying rows would be
  // silently mis-modeled, so they are rejected here.
  for (int j = 1; j < n; ++j) {
    if ((x_long.row(j) - x_long.row(0)).cwiseAbs().maxCoeff() > 0.0)
      ctx("longitudinal covariates vary across visits (time-varying covariates are not supported)");
    if ((x_stable.row(j) - x_stable.row(0)).cwiseAbs().maxCoeff() > 0.0)
      ctx("stable-group covariates vary across visits (time-varying covariates are not supported)");
  }
}

GroupLabel group_label(const SubjectData& s) {
  return s.event ? GroupLabel::kChangePoint : GroupLabel::kUnknown;
}

long StudyDataset::total_obs() const {
  long total = 0;
  for (const auto& s : subjects) total += s.n_visits();
  return total;
}

int StudyDataset::p_long() const {
  return subjects.empty() ? 0 : static_cast<int>(subjects.front().x_long.cols());
}

int StudyDataset::p_stable() const {
  return subjects.empty() ? 0 : static_cast<int>(subjects.front().x_stable.cols());
}

int StudyDataset::q_tte() const {
  return subjects.empty() ? 0 : static_cast<int>(subjects.front().w_tte.size());
}

void StudyDataset::validate() const {
  if (subjects.empty()) fail("dataset holds no subjects");
  std::set<std::string> ids;
  for (const auto& s : subjects) {
    s.validate();
    if (s.x_long.cols() != p_long() || s.x_stable.cols() != p_stable() ||
        s.w_tte.size() != q_tte())
      fail("subject '" + s.id + "': covariate dimensions differ from the rest of the dataset");
    if (!ids.insert(s.id).second) fail("duplicate subject id '" + s.id + "'");
  }
}

namespace {
void check_spd(const Eigen::MatrixXd& m, const std::string& name) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + m.cwiseAbs().maxCoeff()))
    fail(name + " is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) fail(name + " is not positive definite");
}
}  // namespace

void ModelParameters::validate() const {
  if (!(stable_rate >= 0.0 && stable_rate <= 1.0))
    fail("stable_rate must lie in [0, 1]");
  if (!(tte_sd > 0.0) || !(long_sd > 0.0) || !(stable_long_sd > 0.0))
    fail("scale parameters must be positive");
  check_spd(re_cov, "re_cov");
  check_spd(stable_re_cov, "stable_re_cov");
}

std::vector<double> flatten(const ModelParameters& p) {
  std::vector<double> v;
  v.push_back(p.stable_rate);
  for (int i = 0; i < p.tte_coef.size(); ++i) v.push_back(p.tte_coef(i));
  v.push_back(p.tte_sd);
  for (int i = 0; i < 4; ++i) v.push_back(p.re_mean(i));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j <= i; ++j) v.push_back(p.re_cov(i, j));
  for (int i = 0; i < p.long_coef.size(); ++i) v.push_back(p.long_coef(i));
  v.push_back(p.long_sd);
  for (int i = 0; i < 2; ++i) v.push_back(p.stable_re_mean(i));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j <= i; ++j) v.push_back(p.stable_re_cov(i, j));
  for (int i = 0; i < p.stable_long_coef.size(); ++i) v.push_back(p.stable_long_coef(i));
  v.push_back(p.stable_long_sd);
  return v;
}

ModelParameters unflatten(const std::vector<double>& v, int p_long, int p_stable, int q_tte) {
  const std::size_t want = static_cast<std::size_t>(1 + q_tte + 1 + 4 + 10 + p_long + 1 + 2 +
                                                    3 + p_stable + 1);
  if (v.size() != want) fail("unflatten: wrong flat parameter length");
  ModelParameters p;
  std::size_t k = 0;
  p.stable_rate = v[k++];
  p.tte_coef.resize(q_tte);
  for (int i = 0; i < q_tte; ++i) p.tte_coef(i) = v[k++];
  p.tte_sd = v[k++];
  for (int i = 0; i < 4; ++i) p.re_mean(i) = v[k++];
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j <= i; ++j) {
      p.re_cov(i, j) = v[k];
      p.re_cov(j, i) = v[k];
      ++k;
    }
  p.long_coef.resize(p_long);
  for (int i = 0; i < p_long; ++i) p.long_coef(i) = v[k++];
  p.long_sd = v[k++];
  for (int i = 0; i < 2; ++i) p.stable_re_mean(i) = v[k++];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j <= i; ++j) {
      p.stable_re_cov(i, j) = v[k];
      p.stable_re_cov(j, i) = v[k];
      ++k;
    }
  p.stable_long_coef.resize(p_stable);
  for (int i = 0; i < p_stable; ++i) p.stable_long_coef(i) = v[k++];
  p.stable_long_sd = v[k++];
  return p;
}

std::vector<std::string> param_names(int p_long, int p_stable, int q_tte) {
  std::vector<std::string> names;
  names.push_back("stable_rate");
  for (int i = 0; i < q_tte; ++i) names.push_back("tte_coef[" + std::to_string(i) + "]");
  names.push_back("tte_sd");
  for (int i = 0; i < 4; ++i) names.push_back("re_mean[" + std::to_string(i) + "]");
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j <= i; ++j)
      names.push_back("re_cov[" + std::to_string(i) + "][" + std::to_string(j) + "]");
  for (int i = 0; i < p_long; ++i) names.push_back("long_coef[" + std::to_string(i) + "]");
  names.push_back("long_sd");
  for (int i = 0; i < 2; ++i) names.push_back("stable_re_mean[" + std::to_string(i) + "]");
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j <= i; ++j)
      names.push_back("stable_re_cov[" + std::to_string(i) + "][" + std::to_string(j) + "]");
  for (int i = 0; i < p_stable; ++i) names.push_back("stable_long_coef[" + std::to_string(i) + "]");
  names.push_back("stable_long_sd");
  return names;
}

DesignMeans design_means(const StudyDataset& data) {
  if (data.subjects.empty()) fail("design_means: dataset holds no subjects");
  DesignMeans m;
  m.x_long = Eigen::VectorXd::Zero(data.p_long());
  m.x_stable = Eigen::VectorXd::Zero(data.p_stable());
  m.w_tte = Eigen::VectorXd::Zero(data.q_tte());
  for (const auto& s : data.subjects) {
    m.x_long += s.x_long.row(0).transpose();
    m.x_stable += s.x_stable.row(0).transpose();
    m.w_tte += s.w_tte;
  }
  const double n = static_cast<double>(data.n_subjects());
  m.x_long /= n;
  m.x_stable /= n;
  m.w_tte /= n;
  return m;
}

int DrawsSchedule::at(int iteration) const {
  if (iteration < 0) fail("DrawsSchedule: negative iteration");
  const int steps = every > 0 ? iteration / every : 0;
  double k = initial * std::pow(growth, steps);
  return static_cast<int>(std::min<double>(k, cap));
}

}  // namespace cpcure
