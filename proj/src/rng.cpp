#include "cpcure/rng.hpp"

#include <cmath>

#include "cpcure/special.hpp"
#include "cpcure/util.hpp"

namespace cpcure {

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

double Rng::normal() { return norm_quantile(uniform()); }

double Rng::exponential(double rate) {
  if (!(rate > 0.0)) fail("Rng::exponential: rate must be positive");
  return -std::log(uniform()) / rate;
}

}  // namespace cpcure
