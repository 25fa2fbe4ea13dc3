#pragma once

#include "qgeomem/numerics.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>

namespace qgeomem {

/// Counter-based generator: the n-th draw is a pure function of (key, n).
///
/// `split(stream)` derives an independent child key, so a component can hand
/// out sub-generators by name index without sharing mutable state. Draws are
/// built from raw bits rather than <random> distributions, which are not
/// specified bit-for-bit across standard libraries.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  CounterRng split(std::uint64_t stream) const {
    CounterRng child(0);
    child.key_ = mix(key_ ^ mix(stream + 0x9e3779b97f4a7c15ULL));
    return child;
  }

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (one variate per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) {
      u1 = uniform();
    }
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Weights uniform in [-1/√fan_in, +1/√fan_in], where fan_in = rows.
template <typename Scalar>
Matrix<Scalar> uniform_weights(CounterRng rng, Eigen::Index rows, Eigen::Index cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Matrix<Scalar> w(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      w(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
  }
  return w;
}

/// Bias row drawn with the same bound as a layer of the given fan-in.
template <typename Scalar>
RowVector<Scalar> uniform_bias(CounterRng rng, Eigen::Index fan_in, Eigen::Index width) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  RowVector<Scalar> b(width);
  for (Eigen::Index j = 0; j < width; ++j) {
    b(j) = static_cast<Scalar>(rng.uniform(-bound, bound));
  }
  return b;
}

/// Two-layer MLP (hidden width = input width, SiLU hidden activation).
template <typename Scalar>
Mlp<Scalar> two_layer_mlp(CounterRng rng, Eigen::Index in_dim, Eigen::Index out_dim,
                          Activation output_activation) {
  Mlp<Scalar> mlp;
  mlp.layers.push_back({uniform_weights<Scalar>(rng.split(0), in_dim, in_dim),
                        uniform_bias<Scalar>(rng.split(1), in_dim, in_dim),
                        Activation::silu});
  mlp.layers.push_back({uniform_weights<Scalar>(rng.split(2), in_dim, out_dim),
                        uniform_bias<Scalar>(rng.split(3), in_dim, out_dim),
                        output_activation});
  return mlp;
}

}  // namespace qgeomem
