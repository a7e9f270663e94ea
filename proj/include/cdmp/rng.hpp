#pragma once

#include <cstdint>
#include <cstring>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cdmp {

/// Mixes a base seed with a stream index into an independent 64-bit seed
/// (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic random source. All distributions are implemented on top of
/// the raw 64-bit stream so that sequences are reproducible across platforms
/// for a given seed, independent of the standard library's distribution
/// implementations. State is serializable for exact training resume.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return static_cast<int>(v % un);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; second value of each pair is cached.
  double gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  /// Poisson count, Knuth's product method (splits large means so the
  /// running product never underflows).
  int poisson(double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("poisson: negative mean");
    if (lambda == 0.0) return 0;
    if (lambda > 500.0) return poisson(lambda / 2) + poisson(lambda / 2);
    const double limit = std::exp(-lambda);
    int k = 0;
    double prod = 1.0;
    do {
      ++k;
      prod *= uniform();
    } while (prod > limit);
    return k - 1;
  }

  std::string serialize() const {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &cached_, sizeof(bits));
    std::ostringstream os;
    os << eng_ << " " << (has_cached_ ? 1 : 0) << " " << bits;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    int flag = 0;
    std::uint64_t bits = 0;
    is >> flag >> bits;
    if (is.fail()) throw std::runtime_error("Rng::deserialize: malformed state");
    has_cached_ = flag != 0;
    std::memcpy(&cached_, &bits, sizeof(bits));
  }

 private:
  std::mt19937_64 eng_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace cdmp
