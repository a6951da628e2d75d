#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Core>

namespace pfsgd {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30U)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27U)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31U);
}

/// Counter-mode seed derivation: the result depends only on the seed and the
/// key sequence, so substreams can be created in any order.
constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> keys) {
  for (std::uint64_t k : keys) {
    seed = mix64(seed ^ mix64(k));
  }
  return seed;
}

/// Stream tags used by the driver and the study harness.
namespace stream_tag {
inline constexpr std::uint64_t init = 0x11;
inline constexpr std::uint64_t sgd = 0x22;
inline constexpr std::uint64_t predict = 0x33;
inline constexpr std::uint64_t resample = 0x44;
inline constexpr std::uint64_t truth = 0x55;
inline constexpr std::uint64_t observation = 0x66;
inline constexpr std::uint64_t trial = 0x77;
}  // namespace stream_tag

/// A seeded random stream. Copying a stream copies its state.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  /// Independent child stream; derived from the seed, not the current state.
  RandomStream substream(std::initializer_list<std::uint64_t> keys) const {
    return RandomStream(derive_seed(seed_, keys));
  }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  template <int D>
  Eigen::Matrix<double, D, 1> normal_vector() {
    Eigen::Matrix<double, D, 1> v;
    for (int i = 0; i < D; ++i) {
      v[i] = normal();
    }
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace pfsgd
