#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "cpcure/distributions.hpp"
#include "cpcure/rng.hpp"
#include "cpcure/special.hpp"
#include "cpcure/util.hpp"
#include "oracles.hpp"

using namespace cpcure;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::Matrix4d random_spd4(Rng& rng) {
  Eigen::Matrix4d a;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) a(i, j) = rng.normal();
  return a * a.transpose() + 0.5 * Eigen::Matrix4d::Identity();
}
}  // namespace

TEST_SUITE("distributions") {

TEST_CASE("rng streams are deterministic and key-separated") {
  Rng a = Rng::stream(42, 7, 3);
  Rng b = Rng::stream(42, 7, 3);
  Rng c = Rng::stream(42, 7, 4);
  bool same = true, differ = false;
  for (int i = 0; i < 64; ++i) {
    const auto x = a.next_u64();
    same = same && (x == b.next_u64());
    differ = differ || (x != c.next_u64());
  }
  CHECK(same);
  CHECK(differ);
  CHECK(fnv1a64("subj-001") == fnv1a64("subj-001"));
  CHECK(fnv1a64("subj-001") != fnv1a64("subj-002"));
}

TEST_CASE("normal quantile inverts the CDF") {
  // norm_cdf goes through erfc, norm_quantile through the rational
  // approximation, so round-tripping genuinely cross-checks the two.
  const std::vector<double> ps = {1e-12, 1e-7, 1e-3, 0.025, 0.2,  0.5,
                                  0.8,   0.975, 0.999, 1.0 - 1e-7};
  for (double p : ps) {
    const double z = norm_quantile(p);
    CHECK(norm_cdf(z) == doctest::Approx(p).epsilon(1e-11));
  }
  CHECK_THROWS_AS(norm_quantile(0.0), Error);
  CHECK_THROWS_AS(norm_quantile(1.0), Error);
}

TEST_CASE("log survival matches the tail expansion deep in the tail") {
  // Standardized residual of 5: compare against the Mills-ratio series.
  const double got = log_norm_sf(5.0);
  const double want = oracles::mills_log_sf(5.0, 10);
  CHECK(std::abs(got - want) / std::abs(want) < 1e-6);
  // Far beyond erfc's range the value must stay finite and ordered.
  CHECK(std::isfinite(log_norm_sf(50.0)));
  CHECK(log_norm_sf(51.0) < log_norm_sf(50.0));
}

TEST_CASE("log probit interval stays finite and monotone under nesting") {
  // Nested intervals A subset B must satisfy mass(A) <= mass(B).
  Rng rng(99);
  for (int rep = 0; rep < 200; ++rep) {
    const double center = 12.0 * (rng.uniform() - 0.5);
    const double half = 0.1 + 2.0 * rng.uniform();
    const double inner = half * rng.uniform();
    const double big = log_probit_interval(center - half, center + half);
    const double small = log_probit_interval(center - inner, center + inner);
    CHECK(std::isfinite(big));
    CHECK(small <= big + 1e-12);
  }
  // Deep upper tail: representable only in log space.
  const double tail = log_probit_interval(38.0, 39.0);
  CHECK(std::isfinite(tail));
  CHECK(tail < -700.0);
  CHECK_THROWS_AS(log_probit_interval(1.0, 1.0), Error);
}

TEST_CASE("mvn_logpdf matches hand values and a dense-inverse oracle") {
  // Standard normal at zero in one dimension: -0.918939.
  Eigen::VectorXd x1(1), m1(1);
  Eigen::MatrixXd c1(1, 1);
  x1 << 0.0;
  m1 << 0.0;
  c1 << 1.0;
  CHECK(mvn_logpdf(x1, m1, c1) == doctest::Approx(-0.918939).epsilon(1e-5));

  // At the mean the quadratic form vanishes.
  Eigen::VectorXd m2(2);
  m2 << 1.0, -2.0;
  Eigen::MatrixXd c2(2, 2);
  c2 << 2.0, 0.3, 0.3, 0.5;
  const double want2 = -std::log(2.0 * M_PI) - 0.5 * std::log(c2.determinant());
  CHECK(mvn_logpdf(m2, m2, c2) == doctest::Approx(want2).epsilon(1e-12));

  // Random 4-D SPD case against the explicit inverse/determinant formula.
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Matrix4d cov = random_spd4(rng);
    Eigen::Vector4d mean, x;
    for (int i = 0; i < 4; ++i) {
      mean(i) = rng.normal();
      x(i) = rng.normal();
    }
    const double quad = (x - mean).dot(cov.inverse() * (x - mean));
    const double want = -0.5 * quad - 0.5 * std::log(cov.determinant()) -
                        2.0 * std::log(2.0 * M_PI);
    CHECK(mvn_logpdf(x, mean, cov) == doctest::Approx(want).epsilon(1e-10));
  }

  // Non-SPD covariance must raise, not return garbage.
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  Eigen::VectorXd z2 = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(mvn_logpdf(z2, z2, bad), Error);
}

TEST_CASE("conditional Gaussian block formulas") {
  Eigen::Vector4d mean(0.5, 0.1, -0.5, 0.5);
  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
  cov.diagonal() << 0.04, 0.09, 0.04, 0.01;

  SUBCASE("zero cross-covariance decouples the blocks") {
    auto [mb, cb] = mvn_condition(mean, cov, 1.7);
    CHECK((mb - mean.tail<3>()).norm() == doctest::Approx(0.0).epsilon(1e-14));
    CHECK((cb - cov.block<3, 3>(1, 1)).norm() == doctest::Approx(0.0).epsilon(1e-14));
  }

  SUBCASE("conditioning at the marginal mean leaves the mean unchanged") {
    Eigen::Matrix4d cov2 = cov;
    cov2(0, 1) = cov2(1, 0) = 0.03;
    cov2(0, 2) = cov2(2, 0) = -0.02;
    auto [mb, cb] = mvn_condition(mean, cov2, mean(0));
    CHECK((mb - mean.tail<3>()).norm() == doctest::Approx(0.0).epsilon(1e-14));
    // Conditioning can only shrink the covariance (Loewner order): the
    // difference of diagonals is nonnegative and cb stays SPD.
    Eigen::LLT<Eigen::Matrix3d> llt((Eigen::Matrix3d(cb)));
    CHECK(llt.info() == Eigen::Success);
    for (int i = 0; i < 3; ++i) CHECK(cb(i, i) <= cov2(i + 1, i + 1) + 1e-14);
  }

  SUBCASE("binned large-sample check of the conditional moments") {
    Eigen::Matrix4d cov2 = cov;
    cov2(0, 1) = cov2(1, 0) = 0.03;
    cov2(0, 3) = cov2(3, 0) = 0.01;
    Rng rng(11);
    Eigen::LLT<Eigen::Matrix4d> llt(cov2);
    const Eigen::Matrix4d L = llt.matrixL();
    const double target = 0.62, width = 0.01;
    std::vector<double> b0;
    b0.reserve(20000);
    double sum1 = 0.0, sum3 = 0.0;
    int kept = 0;
    for (int i = 0; i < 4000000 && kept < 20000; ++i) {
      Eigen::Vector4d z(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      Eigen::Vector4d r = mean + L * z;
      if (std::abs(r(0) - target) < width) {
        ++kept;
        sum1 += r(1);
        sum3 += r(3);
      }
    }
    REQUIRE(kept > 5000);
    auto [mb, cb] = mvn_condition(mean, cov2, target);
    const double se1 = std::sqrt(cb(0, 0) / kept), se3 = std::sqrt(cb(2, 2) / kept);
    CHECK(std::abs(sum1 / kept - mb(0)) < 4.0 * se1 + 0.01);
    CHECK(std::abs(sum3 / kept - mb(2)) < 4.0 * se3 + 0.01);
  }

  SUBCASE("degenerate omega variance raises") {
    Eigen::Matrix4d cov2 = cov;
    cov2(0, 0) = 0.0;
    CHECK_THROWS_AS(mvn_condition(mean, cov2, 0.5), Error);
  }
}

TEST_CASE("truncated normal sampling") {
  Rng rng(123);

  SUBCASE("no truncation recovers the parent moments") {
    TruncatedNormal tn(1.5, 2.0, -kInf, kInf);
    std::vector<double> xs(200000);
    for (auto& x : xs) x = tn.sample(rng);
    const auto m = oracles::sample_moments(xs);
    CHECK(std::abs(m.mean - 1.5) < 4.0 * 2.0 / std::sqrt(200000.0));
    CHECK(std::sqrt(m.var) == doctest::Approx(2.0).epsilon(0.02));
  }

  SUBCASE("half-normal mean") {
    TruncatedNormal tn(0.0, 1.0, 0.0, kInf);
    std::vector<double> xs(200000);
    for (auto& x : xs) {
      x = tn.sample(rng);
      REQUIRE(x >= 0.0);
    }
    const auto m = oracles::sample_moments(xs);
    CHECK(std::abs(m.mean - std::sqrt(2.0 / M_PI)) < 0.006);
  }

  SUBCASE("interval (1,2): support respected, mean matches quadrature") {
    TruncatedNormal tn(0.0, 1.0, 1.0, 2.0);
    std::vector<double> xs(100000);
    for (auto& x : xs) {
      x = tn.sample(rng);
      REQUIRE(x >= 1.0);
      REQUIRE(x <= 2.0);
    }
    const double mass = oracles::integrate([](double t) { return oracles::std_norm_pdf(t); },
                                           1.0, 2.0, 1e-13);
    const double ex = oracles::integrate([](double t) { return t * oracles::std_norm_pdf(t); },
                                         1.0, 2.0, 1e-13) / mass;
    const auto m = oracles::sample_moments(xs);
    CHECK(std::abs(m.mean - ex) < 3.0 * std::sqrt(m.var / 100000.0));
    CHECK(tn.log_normalizer() == doctest::Approx(std::log(mass)).epsilon(1e-9));
  }

  SUBCASE("deep tail interval (8,9) stays exact") {
    TruncatedNormal tn(0.0, 1.0, 8.0, 9.0);
    std::vector<double> xs(50000);
    for (auto& x : xs) {
      x = tn.sample(rng);
      REQUIRE(x >= 8.0);
      REQUIRE(x <= 9.0);
    }
    const double mass = oracles::integrate([](double t) { return oracles::std_norm_pdf(t); },
                                           8.0, 9.0, 1e-25);
    const double ex = oracles::integrate([](double t) { return t * oracles::std_norm_pdf(t); },
                                         8.0, 9.0, 1e-25) / mass;
    const auto m = oracles::sample_moments(xs);
    CHECK(std::abs(m.mean - ex) < 3.0 * std::sqrt(m.var / 50000.0));
  }

  SUBCASE("very thin tail slice still accepts") {
    TruncatedNormal tn(0.0, 1.0, 10.0, 10.001);
    for (int i = 0; i < 100; ++i) {
      const double x = tn.sample(rng);
      CHECK(x >= 10.0);
      CHECK(x <= 10.001);
    }
  }

  SUBCASE("degenerate inputs raise") {
    CHECK_THROWS_AS(TruncatedNormal(0.0, 0.0, 0.0, 1.0), Error);
    CHECK_THROWS_AS(TruncatedNormal(0.0, 1.0, 2.0, 2.0), Error);
  }
}

TEST_CASE("partially truncated 4-D Gaussian sampler") {
  Rng rng(31415);

  SUBCASE("untruncated limit recovers mean and covariance") {
    Eigen::Vector4d mean(5.0, 0.1, -0.5, 0.5);
    Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
    cov.diagonal() << 0.04, 0.04, 0.02, 0.02;
    cov(0, 1) = cov(1, 0) = 0.01;
    cov(2, 3) = cov(3, 2) = -0.005;
    // omega ~ N(5, 0.2^2): the (0, 1e8] truncation is inert.
    PtmvnSampler sampler(mean, cov);
    const int n = 40000;
    Eigen::Vector4d sum = Eigen::Vector4d::Zero();
    Eigen::Matrix4d sum2 = Eigen::Matrix4d::Zero();
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector4d r = sampler.sample(1e8, rng);
      sum += r;
      sum2 += r * r.transpose();
    }
    const Eigen::Vector4d mhat = sum / n;
    const Eigen::Matrix4d chat = sum2 / n - mhat * mhat.transpose();
    for (int i = 0; i < 4; ++i) {
      CHECK(std::abs(mhat(i) - mean(i)) < 4.0 * std::sqrt(cov(i, i) / n));
      for (int j = 0; j < 4; ++j) CHECK(std::abs(chat(i, j) - cov(i, j)) < 0.003);
    }
  }

  SUBCASE("truncation bound is respected and omega moments match quadrature") {
    Eigen::Vector4d mean(0.5, 0.0, -0.5, 0.5);
    Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
    cov.diagonal() << 0.04, 0.04, 0.02, 0.02;
    cov(0, 2) = cov(2, 0) = 0.008;
    const double upper = 0.4;
    PtmvnSampler sampler(mean, cov);
    const int n = 100000;
    std::vector<double> ws(n);
    for (auto& w : ws) {
      const Eigen::Vector4d r = sampler.sample(upper, rng);
      REQUIRE(r(0) > 0.0);
      REQUIRE(r(0) <= upper);
      w = r(0);
    }
    const double sd = 0.2;
    auto dens = [&](double t) { return oracles::std_norm_pdf((t - 0.5) / sd) / sd; };
    const double mass = oracles::integrate(dens, 0.0, upper, 1e-13);
    const double ex = oracles::integrate([&](double t) { return t * dens(t); }, 0.0, upper,
                                         1e-13) / mass;
    const double ex2 = oracles::integrate([&](double t) { return t * t * dens(t); }, 0.0,
                                          upper, 1e-13) / mass;
    const auto m = oracles::sample_moments(ws);
    CHECK(std::abs(m.mean - ex) < 3.0 * std::sqrt(m.var / n));
    CHECK(std::abs(m.var - (ex2 - ex * ex)) < 4.0 * (ex2 - ex * ex) / std::sqrt(n / 2.0));
  }

  SUBCASE("invalid inputs raise") {
    Eigen::Vector4d mean = Eigen::Vector4d::Zero();
    Eigen::Matrix4d cov = Eigen::Matrix4d::Identity();
    PtmvnSampler sampler(mean, cov);
    CHECK_THROWS_AS(sampler.sample(0.0, rng), Error);
    Eigen::Matrix4d bad = Eigen::Matrix4d::Identity();
    bad(0, 0) = -1.0;
    CHECK_THROWS_AS(PtmvnSampler(mean, bad), Error);
  }
}

TEST_CASE("log-normal AFT density and survival") {
  Eigen::VectorXd w(1), gamma(1);
  w << 1.0;
  gamma << 0.0;

  SUBCASE("frozen reference values") {
    CHECK(lognormal_aft_logdensity(1.0, w, gamma, 1.0) ==
          doctest::Approx(-0.918939).epsilon(1e-5));
    CHECK(lognormal_aft_logdensity(std::exp(1.0), w, gamma, 1.0) ==
          doctest::Approx(-2.418939).epsilon(1e-5));
  }

  SUBCASE("density integrates against a finite-difference of the CDF") {
    Eigen::VectorXd w2(2), g2(2);
    w2 << 1.0, -0.5;
    g2 << 0.3, 0.4;
    const double sigma = 0.7;
    for (double t : {0.25, 1.0, 3.0}) {
      const double h = 1e-5 * t;
      auto cdf = [&](double u) {
        return 1.0 - std::exp(lognormal_aft_logsurvival(u, w2, g2, sigma));
      };
      const double fd = (cdf(t + h) - cdf(t - h)) / (2.0 * h);
      CHECK(std::exp(lognormal_aft_logdensity(t, w2, g2, sigma)) ==
            doctest::Approx(fd).epsilon(1e-6));
    }
  }

  SUBCASE("survival anchors") {
    // At the median the survival is exactly 1/2.
    CHECK(lognormal_aft_logsurvival(1.0, w, gamma, 1.0) ==
          doctest::Approx(std::log(0.5)).epsilon(1e-12));
    // As t -> 0+ the log survival tends to 0.
    CHECK(std::abs(lognormal_aft_logsurvival(1e-12, w, gamma, 1.0)) < 1e-10);
    // Deep right tail: finite, matches the tail expansion through the shared
    // standardization z = (log t - w.gamma) / sigma = 5.
    const double got = lognormal_aft_logsurvival(std::exp(5.0), w, gamma, 1.0);
    const double want = oracles::mills_log_sf(5.0, 10);
    CHECK(std::abs(got - want) / std::abs(want) < 1e-6);
  }

  SUBCASE("domain errors") {
    CHECK_THROWS_AS(lognormal_aft_logdensity(0.0, w, gamma, 1.0), Error);
    CHECK_THROWS_AS(lognormal_aft_logdensity(-1.0, w, gamma, 1.0), Error);
    CHECK_THROWS_AS(lognormal_aft_logdensity(1.0, w, gamma, 0.0), Error);
  }
}

}  // TEST_SUITE
