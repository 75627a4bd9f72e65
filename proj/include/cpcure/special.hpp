#pragma once

#include <vector>

namespace cpcure {

double norm_pdf(double z);
double norm_cdf(double z);

// Upper tail P(Z > z) and its logarithm. The log version stays finite and
// accurate arbitrarily deep in the tail (erfc up to z = 30, Mills-ratio
// asymptotic series beyond).
double norm_sf(double z);
double log_norm_sf(double z);

// Inverse standard normal CDF (Wichura's PPND16 rational approximation),
// accurate to ~1e-15 for p in (0, 1).
double norm_quantile(double p);

// log(Phi(beta) - Phi(alpha)) for alpha < beta, computed without cancellation
// when the interval sits deep in either tail. Returns -inf only if the mass
// underflows even in log space (i.e. alpha == beta numerically).
double log_probit_interval(double alpha, double beta);

// log(sum_k exp(v_k)); -inf for an empty or all -inf input.
double logsumexp(const std::vector<double>& v);

}  // namespace cpcure
