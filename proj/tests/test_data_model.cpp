#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <set>
#include <string>

#include <doctest.h>

#include "cpcure/data_model.hpp"
#include "cpcure/io.hpp"
#include "cpcure/util.hpp"
#include "test_helpers.hpp"

using namespace cpcure;
using test_helpers::make_subject;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

SubjectData basic_subject(const std::string& id = "s1") {
  return make_subject(id, vec({0.0, 0.5, 1.0}), vec({0.1, 0.2, 0.15}), vec({1.0}), vec({0.3}),
                      2.0, true);
}

bool throws_mentioning(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
  } catch (const Error& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("cpcure_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static inline int counter = 0;
};

}  // namespace

TEST_SUITE_BEGIN("data_model");

TEST_CASE("log event time") {
  SubjectData s = basic_subject();
  s.event_time = 1.0;
  CHECK(s.log_event_time() == doctest::Approx(0.0).epsilon(1e-15));
  s.event_time = std::exp(1.0);
  CHECK(s.log_event_time() == doctest::Approx(1.0).epsilon(1e-15));
  s.event_time = 0.5;
  CHECK(s.log_event_time() == doctest::Approx(std::log(0.5)).epsilon(1e-15));
}

TEST_CASE("subject validation names the subject") {
  auto broken = [](auto mutate) {
    SubjectData s = basic_subject("patient_42");
    mutate(s);
    return throws_mentioning([&] { s.validate(); }, "patient_42");
  };
  CHECK(broken([](SubjectData& s) { s.visit_times.resize(0); s.y.resize(0);
                                    s.x_long.resize(0, 1); s.x_stable.resize(0, 1); }));
  CHECK(broken([](SubjectData& s) { s.visit_times(1) = s.visit_times(0); }));
  CHECK(broken([](SubjectData& s) { s.visit_times(2) = 3.0; }));  // visit after follow-up end
  CHECK(broken([](SubjectData& s) { s.y(0) = std::nan(""); }));
  CHECK(broken([](SubjectData& s) { s.event_time = 0.0; }));
  CHECK(broken([](SubjectData& s) { s.event_time = -1.0; }));
  CHECK(broken([](SubjectData& s) { s.x_long(1, 0) = 9.0; }));  // time-varying covariate
  CHECK(broken([](SubjectData& s) { s.y.resize(2); }));         // length mismatch must throw too

  SubjectData ok = basic_subject();
  CHECK_NOTHROW(ok.validate());
  ok.visit_times = vec({2.0});  // single visit exactly at follow-up end is allowed
  ok.y = vec({0.1});
  ok.x_long = Eigen::MatrixXd::Ones(1, 1);
  ok.x_stable = ok.x_long;
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("group labels") {
  SubjectData s = basic_subject();
  CHECK(group_label(s) == GroupLabel::kChangePoint);
  s.event = false;
  CHECK(group_label(s) == GroupLabel::kUnknown);
}

TEST_CASE("dataset validation") {
  StudyDataset d;
  d.subjects.push_back(basic_subject("a"));
  d.subjects.push_back(make_subject("b", vec({0.0, 1.0}), vec({0.3, 0.4}), vec({-1.0}),
                                    vec({0.1}), 1.5, false));
  CHECK(d.n_subjects() == 2);
  CHECK(d.total_obs() == 5);
  CHECK(d.p_long() == 1);
  CHECK(d.q_tte() == 1);
  CHECK_NOTHROW(d.validate());

  StudyDataset dup = d;
  dup.subjects[1].id = "a";
  CHECK(throws_mentioning([&] { dup.validate(); }, "a"));

  StudyDataset mixed = d;
  mixed.subjects[1].w_tte = vec({0.1, 0.2});
  CHECK_THROWS_AS(mixed.validate(), Error);
}

TEST_CASE("flatten and unflatten round trip") {
  ModelParameters p = test_helpers::make_params();
  const auto flat = flatten(p);
  const auto names = param_names(1, 1, 1);
  REQUIRE(names.size() == flat.size());

  ModelParameters q = unflatten(flat, 1, 1, 1);
  CHECK(q.stable_rate == p.stable_rate);
  CHECK(q.tte_coef == p.tte_coef);
  CHECK(q.tte_sd == p.tte_sd);
  CHECK(q.re_mean == p.re_mean);
  CHECK(q.re_cov == p.re_cov);
  CHECK(q.long_coef == p.long_coef);
  CHECK(q.long_sd == p.long_sd);
  CHECK(q.stable_re_mean == p.stable_re_mean);
  CHECK(q.stable_re_cov == p.stable_re_cov);
  CHECK(q.stable_long_coef == p.stable_long_coef);
  CHECK(q.stable_long_sd == p.stable_long_sd);

  // Distinct coordinates map to distinct names.
  std::set<std::string> uniq(names.begin(), names.end());
  CHECK(uniq.size() == names.size());

  // The flat view must carry every free coordinate exactly once:
  // 1 + q + 1 + 4 + 10 + p + 1 + 2 + 3 + p_s + 1 with p = p_s = q = 1.
  CHECK(flat.size() == 26);
}

TEST_CASE("design means average covariate rows") {
  StudyDataset d;
  d.subjects.push_back(make_subject("a", vec({0.0}), vec({0.1}), vec({1.0}), vec({2.0}), 1.0,
                                    true));
  d.subjects.push_back(make_subject("b", vec({0.0, 0.3}), vec({0.1, 0.2}), vec({3.0}),
                                    vec({4.0}), 1.0, false));
  DesignMeans m = design_means(d);
  CHECK(m.x_long(0) == doctest::Approx(2.0).epsilon(1e-15));   // per subject, not per visit
  CHECK(m.x_stable(0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(m.w_tte(0) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("draw schedule grows geometrically and caps") {
  DrawsSchedule s;  // 200 * 1.5^(iter/10), cap 5000
  CHECK(s.at(0) == 200);
  CHECK(s.at(9) == 200);
  CHECK(s.at(10) == 300);
  CHECK(s.at(20) == 450);
  CHECK(s.at(1000) == 5000);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("io");

namespace {

void write_pair(const TempDir& dir, const std::string& long_csv, const std::string& event_csv) {
  write_text_file(dir.file("long.csv"), long_csv);
  write_text_file(dir.file("events.csv"), event_csv);
}

const char* kLongCsv =
    "subject_id,visit_time,y,x1\n"
    "b,0.5,0.21,-1\n"
    "a,0,0.1,1\n"
    "a,1,0.3,1\n"
    "b,0,0.2,-1\n"
    "a,0.5,0.2,1\n";
const char* kEventCsv =
    "subject_id,event_time,event,x1\n"
    "a,1.5,1,1\n"
    "b,2,0,-1\n";

}  // namespace

TEST_CASE("ingest orders subjects by event file and sorts visits") {
  TempDir dir;
  write_pair(dir, kLongCsv, kEventCsv);
  StudyDataset d = ingest_dataset(dir.file("long.csv"), dir.file("events.csv"));
  REQUIRE(d.n_subjects() == 2);
  CHECK(d.subjects[0].id == "a");
  CHECK(d.subjects[1].id == "b");
  CHECK(d.subjects[0].n_visits() == 3);
  CHECK(d.subjects[0].visit_times(0) == 0.0);
  CHECK(d.subjects[0].visit_times(1) == 0.5);
  CHECK(d.subjects[0].visit_times(2) == 1.0);
  CHECK(d.subjects[0].y(1) == 0.2);
  CHECK(d.subjects[0].event);
  CHECK(!d.subjects[1].event);
  CHECK(d.subjects[1].y(0) == 0.2);  // visit rows were out of order in the file
  CHECK(d.p_long() == 1);
  CHECK(d.subjects[0].x_long(0, 0) == 1.0);
  CHECK(d.subjects[1].w_tte(0) == -1.0);
}

TEST_CASE("ingest converts days to years on request") {
  TempDir dir;
  write_pair(dir,
             "subject_id,visit_time,y,x1\n"
             "a,0,0.1,1\n"
             "a,365.25,0.3,1\n",
             "subject_id,event_time,event,x1\n"
             "a,730.5,1,1\n");
  StudyDataset d =
      ingest_dataset(dir.file("long.csv"), dir.file("events.csv"), ColumnSchema{}, true);
  CHECK(d.subjects[0].visit_times(1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(d.subjects[0].event_time == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("ingest failure modes carry the offending name") {
  TempDir dir;

  write_pair(dir, kLongCsv,
             "subject_id,event_time,event,x1\n"
             "a,0.9,1,1\n"  // last visit of a is at 1.0 > 0.9
             "b,2,0,-1\n");
  CHECK(throws_mentioning(
      [&] { ingest_dataset(dir.file("long.csv"), dir.file("events.csv")); }, "a"));

  write_pair(dir,
             "subject_id,visit_time,y,x1\n"
             "ghost,0,0.1,1\n",
             kEventCsv);
  CHECK(throws_mentioning(
      [&] { ingest_dataset(dir.file("long.csv"), dir.file("events.csv")); }, "ghost"));

  write_pair(dir, kLongCsv,
             "subject_id,event_time,event,x1\n"
             "a,1.5,1,1\n"
             "a,2,0,1\n"
             "b,2,0,-1\n");
  CHECK(throws_mentioning(
      [&] { ingest_dataset(dir.file("long.csv"), dir.file("events.csv")); }, "a"));

  write_pair(dir, kLongCsv,
             "subject_id,event_time,event,x1\n"
             "a,1.5,2,1\n"  // indicator must be 0/1
             "b,2,0,-1\n");
  CHECK_THROWS_AS(ingest_dataset(dir.file("long.csv"), dir.file("events.csv")), Error);

  write_pair(dir,
             "subject_id,visit_time,y,x1\n"
             "a,0,oops,1\n",
             kEventCsv);
  CHECK(throws_mentioning(
      [&] { ingest_dataset(dir.file("long.csv"), dir.file("events.csv")); }, "row 2"));

  // Subject in the event file with no longitudinal rows.
  write_pair(dir,
             "subject_id,visit_time,y,x1\n"
             "a,0,0.1,1\n",
             kEventCsv);
  CHECK(throws_mentioning(
      [&] { ingest_dataset(dir.file("long.csv"), dir.file("events.csv")); }, "b"));

  CHECK(throws_mentioning([&] { ingest_dataset(dir.file("nope.csv"), dir.file("events.csv")); },
                          "nope.csv"));
}

TEST_CASE("covariates are autodetected in file order") {
  TempDir dir;
  write_pair(dir,
             "subject_id,visit_time,extra,y,x1\n"
             "a,0,7,0.1,1\n",
             "subject_id,w2,event_time,event\n"
             "a,5,1.5,1\n");
  StudyDataset d = ingest_dataset(dir.file("long.csv"), dir.file("events.csv"));
  REQUIRE(d.p_long() == 2);
  CHECK(d.subjects[0].x_long(0, 0) == 7.0);  // `extra` precedes `x1` in the file
  CHECK(d.subjects[0].x_long(0, 1) == 1.0);
  REQUIRE(d.q_tte() == 1);
  CHECK(d.subjects[0].w_tte(0) == 5.0);
}

TEST_CASE("arm splitting") {
  TempDir dir;
  write_pair(dir,
             "subject_id,visit_time,y,x1\n"
             "a,0,0.1,1\n"
             "b,0,0.2,1\n"
             "c,0,0.3,1\n",
             "subject_id,event_time,event,x1,arm\n"
             "a,1,1,1,treat\n"
             "b,1,0,1,control\n"
             "c,1,1,1,treat\n");
  ColumnSchema schema;
  schema.arm = "arm";
  auto by_arm = ingest_by_arm(dir.file("long.csv"), dir.file("events.csv"), schema);
  REQUIRE(by_arm.size() == 2);
  CHECK(by_arm.at("treat").n_subjects() == 2);
  CHECK(by_arm.at("control").n_subjects() == 1);
  CHECK(by_arm.at("treat").subjects[1].id == "c");
}

TEST_CASE("dataset serialization round trips exactly") {
  StudyDataset d;
  Eigen::VectorXd t(3), y(3);
  t << 0.0, 1.0 / 3.0, std::sqrt(2.0);
  y << 0.1, -1.0 / 7.0, 0.3333333333333333;
  d.subjects.push_back(make_subject("s-1", t, y, vec({1.0 / 9.0}), vec({std::sqrt(3.0)}),
                                    std::exp(1.0), true));
  d.subjects.push_back(make_subject("s-2", vec({0.25}), vec({-0.5}), vec({2.0}), vec({0.0}),
                                    4.0, false));

  TempDir dir;
  write_dataset_csv(d, dir.file("long.csv"), dir.file("events.csv"));
  StudyDataset back = ingest_dataset(dir.file("long.csv"), dir.file("events.csv"));
  REQUIRE(back.n_subjects() == 2);
  for (int i = 0; i < 2; ++i) {
    const SubjectData &a = d.subjects[i], &b = back.subjects[i];
    CHECK(a.id == b.id);
    CHECK(a.visit_times == b.visit_times);
    CHECK(a.y == b.y);
    CHECK(a.x_long == b.x_long);
    CHECK(a.x_stable == b.x_stable);
    CHECK(a.w_tte == b.w_tte);
    CHECK(a.event_time == b.event_time);
    CHECK(a.event == b.event);
  }

  // The two-file form has one covariate block; a dataset whose stable-group
  // covariates genuinely differ cannot be written to it.
  StudyDataset odd = d;
  odd.subjects[0].x_stable.array() += 1.0;
  CHECK_THROWS_AS(write_dataset_csv(odd, dir.file("l2.csv"), dir.file("e2.csv")), Error);

  // arm_label adds a constant arm column that ingest_by_arm can consume.
  write_dataset_csv(d, dir.file("l3.csv"), dir.file("e3.csv"), "treat");
  ColumnSchema schema;
  schema.arm = "arm";
  auto by_arm = ingest_by_arm(dir.file("l3.csv"), dir.file("e3.csv"), schema);
  REQUIRE(by_arm.size() == 1);
  CHECK(by_arm.at("treat").n_subjects() == 2);
}

TEST_CASE("parameter json round trips exactly") {
  ModelParameters p = test_helpers::make_params();
  p.stable_rate = 1.0 / 3.0;
  p.re_cov(0, 1) = p.re_cov(1, 0) = 0.0123456789012345678;
  nlohmann::json j = params_to_json(p);
  ModelParameters q = params_from_json(j);
  CHECK(flatten(p) == flatten(q));

  nlohmann::json bad = j;
  bad["re_cov"] = std::vector<std::vector<double>>{{1.0, 0.0}, {0.0, 1.0}};
  CHECK_THROWS_AS(params_from_json(bad), Error);
}

TEST_CASE("design means json round trip") {
  DesignMeans m;
  m.x_long = vec({0.5});
  m.x_stable = vec({0.5});
  m.w_tte = vec({-0.25, 1.0 / 3.0});
  DesignMeans back = design_means_from_json(design_means_to_json(m));
  CHECK(back.x_long == m.x_long);
  CHECK(back.x_stable == m.x_stable);
  CHECK(back.w_tte == m.w_tte);
}

TEST_CASE("full precision formatting") {
  for (double x : {1.0 / 3.0, std::sqrt(2.0), 1e-300, -0.1, 0.0, 12345.678901234567}) {
    const std::string s = format_double(x);
    CHECK(std::strtod(s.c_str(), nullptr) == x);
  }
}

TEST_SUITE_END();
