#include "cpcure/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cpcure/util.hpp"

namespace cpcure {

namespace {

constexpr double kDaysPerYear = 365.25;

double parse_double(const std::string& file, std::size_t row, const std::string& col,
                    const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(v))
    fail(file + " row " + std::to_string(row) + ": non-numeric value '" + text +
         "' in column '" + col + "'");
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

int require_column(const CsvTable& t, const std::string& path, const std::string& name) {
  const int c = t.column(name);
  if (c < 0) fail(path + ": missing required column '" + name + "'");
  return c;
}

std::vector<std::string> autodetect(const CsvTable& t, const std::vector<std::string>& taken) {
  std::vector<std::string> out;
  for (const auto& h : t.header)
    if (std::find(taken.begin(), taken.end(), h) == taken.end()) out.push_back(h);
  return out;
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open file '" + path + "'");
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      fail(path + " row " + std::to_string(lineno) + ": expected " +
           std::to_string(t.header.size()) + " fields, got " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) fail(path + ": empty file");
  return t;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write file '" + path + "'");
  out << content;
  if (!out) fail("failed writing file '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

ColumnSchema schema_from_json(const nlohmann::json& j) {
  ColumnSchema s;
  if (j.contains("subject_id")) s.subject_id = j.at("subject_id").get<std::string>();
  if (j.contains("visit_time")) s.visit_time = j.at("visit_time").get<std::string>();
  if (j.contains("outcome")) s.outcome = j.at("outcome").get<std::string>();
  if (j.contains("long_covariates"))
    s.long_covariates = j.at("long_covariates").get<std::vector<std::string>>();
  if (j.contains("stable_long_covariates"))
    s.stable_long_covariates = j.at("stable_long_covariates").get<std::vector<std::string>>();
  if (j.contains("event_time")) s.event_time = j.at("event_time").get<std::string>();
  if (j.contains("event_indicator")) s.event_indicator = j.at("event_indicator").get<std::string>();
  if (j.contains("tte_covariates"))
    s.tte_covariates = j.at("tte_covariates").get<std::vector<std::string>>();
  if (j.contains("arm")) s.arm = j.at("arm").get<std::string>();
  return s;
}

ColumnSchema schema_from_json_file(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail("schema file '" + path + "': " + e.what());
  }
  return schema_from_json(j);
}

namespace {

struct EventRow {
  double time = 0.0;
  bool event = false;
  Eigen::VectorXd w;
  std::string arm;
  std::size_t order = 0;
};

struct LongRows {
  std::vector<double> times;
  std::vector<double> y;
  std::vector<Eigen::VectorXd> x;
};

}  // namespace

static std::map<std::string, StudyDataset> ingest_impl(const std::string& long_path,
                                                       const std::string& event_path,
                                                       const ColumnSchema& schema,
                                                       bool days_to_years, bool split_by_arm) {
  const CsvTable ev = read_csv(event_path);
  const CsvTable lg = read_csv(long_path);

  const int ev_id = require_column(ev, event_path, schema.subject_id);
  const int ev_time = require_column(ev, event_path, schema.event_time);
  const int ev_ind = require_column(ev, event_path, schema.event_indicator);
  const int ev_arm = schema.arm.empty() ? -1 : require_column(ev, event_path, schema.arm);
  if (split_by_arm && ev_arm < 0)
    fail(event_path + ": arm-based split requested but no arm column assigned");

  std::vector<std::string> tte_names = schema.tte_covariates;
  if (tte_names.empty()) {
    std::vector<std::string> taken = {schema.subject_id, schema.event_time,
                                      schema.event_indicator};
    if (ev_arm >= 0) taken.push_back(schema.arm);
    tte_names = autodetect(ev, taken);
  }
  std::vector<int> tte_cols;
  for (const auto& name : tte_names) tte_cols.push_back(require_column(ev, event_path, name));

  const int lg_id = require_column(lg, long_path, schema.subject_id);
  const int lg_time = require_column(lg, long_path, schema.visit_time);
  const int lg_y = require_column(lg, long_path, schema.outcome);
  std::vector<std::string> x_names = schema.long_covariates;
  if (x_names.empty())
    x_names = autodetect(lg, {schema.subject_id, schema.visit_time, schema.outcome});
  std::vector<std::string> xs_names =
      schema.stable_long_covariates.empty() ? x_names : schema.stable_long_covariates;
  std::vector<int> x_cols, xs_cols;
  for (const auto& name : x_names) x_cols.push_back(require_column(lg, long_path, name));
  for (const auto& name : xs_names) xs_cols.push_back(require_column(lg, long_path, name));

  std::map<std::string, EventRow> events;
  std::vector<std::string> subject_order;
  for (std::size_t r = 0; r < ev.rows.size(); ++r) {
    const auto& row = ev.rows[r];
    const std::string id = row[ev_id];
    if (events.count(id)) fail(event_path + ": duplicate subject id '" + id + "'");
    EventRow e;
    e.time = parse_double(event_path, r + 2, schema.event_time, row[ev_time]);
    const double ind = parse_double(event_path, r + 2, schema.event_indicator, row[ev_ind]);
    if (ind != 0.0 && ind != 1.0)
      fail(event_path + " row " + std::to_string(r + 2) + ": event indicator must be 0 or 1");
    e.event = ind == 1.0;
    e.w.resize(static_cast<Eigen::Index>(tte_cols.size()));
    for (std::size_t c = 0; c < tte_cols.size(); ++c)
      e.w(static_cast<Eigen::Index>(c)) =
          parse_double(event_path, r + 2, tte_names[c], row[tte_cols[c]]);
    if (ev_arm >= 0) e.arm = row[ev_arm];
    if (days_to_years) e.time /= kDaysPerYear;
    e.order = r;
    events.emplace(id, std::move(e));
    subject_order.push_back(id);
  }

  std::map<std::string, LongRows> longs;
  for (std::size_t r = 0; r < lg.rows.size(); ++r) {
    const auto& row = lg.rows[r];
    const std::string id = row[lg_id];
    if (!events.count(id))
      fail("subject '" + id + "' appears in '" + long_path + "' but not in '" + event_path +
           "'");
    auto& e = longs[id];
    double t = parse_double(long_path, r + 2, schema.visit_time, row[lg_time]);
    if (days_to_years) t /= kDaysPerYear;
    e.times.push_back(t);
    e.y.push_back(parse_double(long_path, r + 2, schema.outcome, row[lg_y]));
    Eigen::VectorXd x(static_cast<Eigen::Index>(x_cols.size() + xs_cols.size()));
    for (std::size_t c = 0; c < x_cols.size(); ++c)
      x(static_cast<Eigen::Index>(c)) = parse_double(long_path, r + 2, x_names[c], row[x_cols[c]]);
    for (std::size_t c = 0; c < xs_cols.size(); ++c)
      x(static_cast<Eigen::Index>(x_cols.size() + c)) =
          parse_double(long_path, r + 2, xs_names[c], row[xs_cols[c]]);
    e.x.push_back(std::move(x));
  }

  std::map<std::string, StudyDataset> out;
  for (const auto& id : subject_order) {
    const EventRow& e = events.at(id);
    auto it = longs.find(id);
    if (it == longs.end())
      fail("subject '" + id + "' appears in '" + event_path + "' but has no rows in '" +
           long_path + "'");
    const LongRows& rows = it->second;
    const int n = static_cast<int>(rows.times.size());
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return rows.times[a] < rows.times[b]; });
    SubjectData s;
    s.id = id;
    s.event_time = e.time;
    s.event = e.event;
    s.w_tte = e.w;
    s.visit_times.resize(n);
    s.y.resize(n);
    s.x_long.resize(n, static_cast<Eigen::Index>(x_cols.size()));
    s.x_stable.resize(n, static_cast<Eigen::Index>(xs_cols.size()));
    for (int j = 0; j < n; ++j) {
      const int k = idx[j];
      s.visit_times(j) = rows.times[k];
      s.y(j) = rows.y[k];
      s.x_long.row(j) = rows.x[k].head(static_cast<Eigen::Index>(x_cols.size())).transpose();
      s.x_stable.row(j) = rows.x[k].tail(static_cast<Eigen::Index>(xs_cols.size())).transpose();
    }
    s.validate();
    out[split_by_arm ? e.arm : std::string()].subjects.push_back(std::move(s));
  }
  for (auto& [arm, data] : out) data.validate();
  return out;
}

StudyDataset ingest_dataset(const std::string& long_path, const std::string& event_path,
                            const ColumnSchema& schema, bool days_to_years) {
  auto by_arm = ingest_impl(long_path, event_path, schema, days_to_years, false);
  return std::move(by_arm.begin()->second);
}

std::map<std::string, StudyDataset> ingest_by_arm(const std::string& long_path,
                                                  const std::string& event_path,
                                                  const ColumnSchema& schema,
                                                  bool days_to_years) {
  return ingest_impl(long_path, event_path, schema, days_to_years, true);
}

void write_dataset_csv(const StudyDataset& data, const std::string& long_path,
                       const std::string& event_path, const std::string& arm_label) {
  // The CSV form carries one covariate block; stable-group covariates are a
  // schema-level view of the same columns, so they must coincide here.
  for (const auto& s : data.subjects)
    if (s.x_stable.cols() != s.x_long.cols() || (s.x_stable - s.x_long).cwiseAbs().maxCoeff() > 0.0)
      fail("write_dataset_csv: stable covariates differ from longitudinal covariates; "
           "this dataset cannot be represented in the two-file CSV form");
  std::string lg = "subject_id,visit_time,y";
  for (int c = 0; c < data.p_long(); ++c) lg += ",x" + std::to_string(c + 1);
  lg += "\n";
  for (const auto& s : data.subjects)
    for (int j = 0; j < s.n_visits(); ++j) {
      lg += s.id + "," + format_double(s.visit_times(j)) + "," + format_double(s.y(j));
      for (int c = 0; c < data.p_long(); ++c) lg += "," + format_double(s.x_long(j, c));
      lg += "\n";
    }
  write_text_file(long_path, lg);

  std::string ev = "subject_id,event_time,event";
  for (int c = 0; c < data.q_tte(); ++c) ev += ",w" + std::to_string(c + 1);
  if (!arm_label.empty()) ev += ",arm";
  ev += "\n";
  for (const auto& s : data.subjects) {
    ev += s.id + "," + format_double(s.event_time) + "," + (s.event ? "1" : "0");
    for (int c = 0; c < data.q_tte(); ++c) ev += "," + format_double(s.w_tte(c));
    if (!arm_label.empty()) ev += "," + arm_label;
    ev += "\n";
  }
  write_text_file(event_path, ev);
}

namespace {
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index c = r > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != c) fail("ragged matrix in JSON");
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = rows[i][k];
  }
  return m;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto vals = j.get<std::vector<double>>();
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<Eigen::Index>(i)) = vals[i];
  return v;
}
}  // namespace

nlohmann::json params_to_json(const ModelParameters& p) {
  nlohmann::json j;
  j["stable_rate"] = p.stable_rate;
  j["tte_coef"] = vector_to_json(p.tte_coef);
  j["tte_sd"] = p.tte_sd;
  j["re_mean"] = vector_to_json(p.re_mean);
  j["re_cov"] = matrix_to_json(p.re_cov);
  j["long_coef"] = vector_to_json(p.long_coef);
  j["long_sd"] = p.long_sd;
  j["stable_re_mean"] = vector_to_json(p.stable_re_mean);
  j["stable_re_cov"] = matrix_to_json(p.stable_re_cov);
  j["stable_long_coef"] = vector_to_json(p.stable_long_coef);
  j["stable_long_sd"] = p.stable_long_sd;
  return j;
}

ModelParameters params_from_json(const nlohmann::json& j) {
  ModelParameters p;
  try {
    p.stable_rate = j.at("stable_rate").get<double>();
    p.tte_coef = vector_from_json(j.at("tte_coef"));
    p.tte_sd = j.at("tte_sd").get<double>();
    const Eigen::VectorXd rm = vector_from_json(j.at("re_mean"));
    if (rm.size() != 4) fail("re_mean must have 4 entries");
    p.re_mean = rm;
    const Eigen::MatrixXd rc = matrix_from_json(j.at("re_cov"));
    if (rc.rows() != 4 || rc.cols() != 4) fail("re_cov must be 4x4");
    p.re_cov = rc;
    p.long_coef = vector_from_json(j.at("long_coef"));
    p.long_sd = j.at("long_sd").get<double>();
    const Eigen::VectorXd sm = vector_from_json(j.at("stable_re_mean"));
    if (sm.size() != 2) fail("stable_re_mean must have 2 entries");
    p.stable_re_mean = sm;
    const Eigen::MatrixXd sc = matrix_from_json(j.at("stable_re_cov"));
    if (sc.rows() != 2 || sc.cols() != 2) fail("stable_re_cov must be 2x2");
    p.stable_re_cov = sc;
    p.stable_long_coef = vector_from_json(j.at("stable_long_coef"));
    p.stable_long_sd = j.at("stable_long_sd").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed parameter JSON: ") + e.what());
  }
  return p;
}

nlohmann::json design_means_to_json(const DesignMeans& m) {
  nlohmann::json j;
  j["x_long"] = vector_to_json(m.x_long);
  j["x_stable"] = vector_to_json(m.x_stable);
  j["w_tte"] = vector_to_json(m.w_tte);
  return j;
}

DesignMeans design_means_from_json(const nlohmann::json& j) {
  DesignMeans m;
  try {
    m.x_long = vector_from_json(j.at("x_long"));
    m.x_stable = vector_from_json(j.at("x_stable"));
    m.w_tte = vector_from_json(j.at("w_tte"));
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed design-means JSON: ") + e.what());
  }
  return m;
}

}  // namespace cpcure
