#pragma once

// Shared plumbing: error types, deterministic RNG streams, checksums, logging.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace langtraj {

// ---------------------------------------------------------------------------
// errors

// Bad caller-supplied values (shapes, ranges, unknown names).
struct InvalidInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed bytes on disk (CSV/JSON/checkpoint). Messages carry line numbers
// or field names where available.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A config file violates a documented constraint. The message names the key.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values produced mid-computation (training blow-up, bad decode).
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// hashing / checksums

constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = kFnvOffset) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// splitmix64; used to derive independent seed streams from one master seed.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t seed_combine(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

inline uint64_t seed_combine(uint64_t a, std::string_view tag) {
  return seed_combine(a, fnv1a64(tag));
}

// ---------------------------------------------------------------------------
// rng
//
// mt19937_64 core with hand-rolled transforms so draws are identical across
// standard libraries (std::normal_distribution is implementation-defined).

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // (0, 1); never returns 0 so log() is safe
  double uniform_pos() {
    double u = uniform();
    return u > 0.0 ? u : 0x1.0p-53;
  }

  // N(0,1) via Box-Muller with a cached spare
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // standard Gumbel(0,1)
  double gumbel() { return -std::log(-std::log(uniform_pos())); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    if (n <= 0) throw InvalidInput("uniform_int: n must be positive");
    return static_cast<int>(uniform() * n) % n;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// logging (stderr; level from LANGTRAJ_LOG = quiet|info|debug)

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

LogLevel log_level();

void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// printf-round-trippable formatting for doubles (17 significant digits)
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace langtraj
