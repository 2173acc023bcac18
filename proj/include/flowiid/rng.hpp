#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "flowiid/tensor.hpp"

namespace flowiid {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seeded random source. Distributions are hand-rolled on top of mt19937_64
/// so draws are identical on every platform (std:: distributions are
/// implementation-defined). Streams let one master seed derive independent
/// per-purpose engines: Rng(seed, stream) is reproducible without carrying
/// engine state across steps.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : eng_(splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x9E3779B97F4A7C15ULL + 1))) {}

  /// Uniform on [0, 1).
  double uniform() {
    return double(eng_() >> 11) * (1.0 / 9007199254740992.0);  // 53-bit mantissa
  }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (no cached spare; two draws per call).
  double normal() {
    const double u1 = double((eng_() >> 11) + 1) * (1.0 / 9007199254740993.0);  // (0, 1]
    const double u2 = double(eng_() >> 11) * (1.0 / 9007199254740992.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    check(n > 0, "Rng::uniform_int: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  template <typename Scalar>
  void fill_normal(Tensor<Scalar>& t, double stddev = 1.0) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = Scalar(stddev * normal());
  }

  template <typename Scalar>
  void fill_uniform(Tensor<Scalar>& t, double lo, double hi) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = Scalar(uniform(lo, hi));
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = std::uint64_t(last - first);
    for (std::uint64_t i = n; i > 1; --i) std::swap(first[i - 1], first[uniform_int(i)]);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }
  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace flowiid
