#pragma once

#include <cstdint>
#include <random>

#include "pdm/tensor.hpp"

namespace pdm {

/// SplitMix64 finalizer; used to derive independent stream seeds from keys.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_key(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return derive_key(derive_key(a, b), c);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix64(seed)) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

  Tensor normal_tensor(const Shape& shape, double stddev = 1.0);
  Tensor uniform_tensor(const Shape& shape, double lo, double hi);

 private:
  std::mt19937_64 engine_;
};

}  // namespace pdm
