#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <random>

namespace scenforge {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent per-cell streams.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x51ed2701d6a3c4b5ULL;
  for (std::uint64_t p : parts) h = mix_seed(h, p);
  return h;
}

inline void fill_normal(Rng& rng, Eigen::Ref<Eigen::VectorXd> out) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = dist(rng);
}

inline Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  fill_normal(rng, v);
  return v;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace scenforge
