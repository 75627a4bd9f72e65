#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

namespace cpcure {

inline constexpr const char* kVersion = "0.1.0";

// Base type for everything this library throws, so callers can tell artifact
// failures apart from std:: internals.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is split into
// contiguous index blocks and every index writes only its own output slot,
// so results are identical for any thread count. Exceptions from workers are
// rethrown on the calling thread.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace cpcure
