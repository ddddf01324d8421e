#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace s3nas {

// Status codes shared by the C API and the CLI exit codes.
enum class Status : int {
  Ok = 0,
  ConfigError = 2,     // bad config, missing/unreadable file, parse failure
  Infeasible = 3,      // constraint cannot be met
  InvariantViolation = 4,
  NumericDivergence = 5,
};

class Error : public std::runtime_error {
 public:
  Error(Status status, const std::string& message)
      : std::runtime_error(message), status_(status) {}
  Status status() const { return status_; }

 private:
  Status status_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(Status::ConfigError, m) {}
};
struct InfeasibleError : Error {
  explicit InfeasibleError(const std::string& m) : Error(Status::Infeasible, m) {}
};
struct InvariantError : Error {
  explicit InvariantError(const std::string& m) : Error(Status::InvariantViolation, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(Status::NumericDivergence, m) {}
};

// Deterministic RNG. All randomness in the project goes through this wrapper
// so results are reproducible from a single seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1). Hand-rolled from raw bits: the distribution classes in
  // <random> are not pinned by the standard.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  int index(std::size_t n) { return static_cast<int>(below(n)); }

  // Standard normal via Box-Muller on deterministic uniforms.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Derive an independent stream, e.g. one per sample index.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over the pair; decorrelates consecutive streams.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Shortest round-trip decimal for a double; integers print without a point.
inline std::string format_number(double v) {
  if (v == static_cast<long long>(v) && std::abs(v) < 1e15) {
    return std::to_string(static_cast<long long>(v));
  }
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Full-precision decimal (exact round trip) for CSV storage.
inline std::string format_exact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& what) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("cannot parse number '" + s + "' in " + what);
  }
  return v;
}

inline long long parse_int(const std::string& s, const std::string& what) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("cannot parse integer '" + s + "' in " + what);
  }
  return v;
}

}  // namespace s3nas
