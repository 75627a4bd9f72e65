#include "cpcure/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cpcure/util.hpp"

namespace cpcure {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kLogSqrt2Pi = 0.9189385332046727418;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

double norm_pdf(double z) { return std::exp(-0.5 * z * z - kLogSqrt2Pi); }

double norm_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

double norm_sf(double z) { return 0.5 * std::erfc(z * kInvSqrt2); }

double log_norm_sf(double z) {
  if (z < 30.0) {
    // erfc holds full relative accuracy down to ~1e-300, i.e. z ~ 37.
    return std::log(0.5 * std::erfc(z * kInvSqrt2));
  }
  // Mills-ratio asymptotic series: Phi_bar(z) = phi(z)/z * sum (-1)^k (2k-1)!!/z^2k.
  const double zi2 = 1.0 / (z * z);
  double term = 1.0, sum = 1.0;
  for (int k = 1; k <= 6; ++k) {
    term *= -(2.0 * k - 1.0) * zi2;
    sum += term;
  }
  return -0.5 * z * z - kLogSqrt2Pi - std::log(z) + std::log(sum);
}

double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) fail("norm_quantile: p must lie strictly in (0, 1)");
  const double q = p - 0.5;
  double r, num, den;
  if (std::abs(q) <= 0.425) {
    r = 0.180625 - q * q;
    num = (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
              1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
            1.3314166789178437745e+2) * r + 3.3871328727963666080e+0);
    den = (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
              5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
            4.2313330701600911252e+1) * r + 1.0);
    return q * num / den;
  }
  r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  if (r <= 5.0) {
    r -= 1.6;
    num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
              3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
            4.63033784615654529590e+0) * r + 1.42343711074968357734e+0);
    den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
            2.05319162663775882187e+0) * r + 1.0);
  } else {
    r -= 5.0;
    num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
            5.46378491116411436990e+0) * r + 6.65790464350110377720e+0);
    den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  const double val = num / den;
  return (q < 0.0) ? -val : val;
}

double log_probit_interval(double alpha, double beta) {
  if (!(alpha < beta)) fail("log_probit_interval: requires alpha < beta");
  if (alpha > 0.0) {
    // Both ends in the upper tail: work with survival functions.
    const double la = log_norm_sf(alpha), lb = log_norm_sf(beta);
    const double d = lb - la;  // <= 0
    if (d >= 0.0) return -kInf;
    return la + std::log1p(-std::exp(d));
  }
  if (beta < 0.0) {
    const double la = log_norm_sf(-beta), lb = log_norm_sf(-alpha);
    const double d = lb - la;
    if (d >= 0.0) return -kInf;
    return la + std::log1p(-std::exp(d));
  }
  // Interval straddles zero: direct difference has no cancellation problem.
  return std::log(norm_cdf(beta) - norm_cdf(alpha));
}

double logsumexp(const std::vector<double>& v) {
  double m = -kInf;
  for (double x : v) m = std::max(m, x);
  if (m == -kInf) return -kInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace cpcure
