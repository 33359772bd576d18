#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace c2ir {

// splitmix64 step; used to derive independent child seeds from one root seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic seed derivation along a path of stream tags, so that every
// generator in the pipeline owns an independent stream of the root seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(base);
  for (std::uint64_t p : path) s = splitmix64(s ^ p);
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }

  // in [lo, hi] inclusive
  int uniform_int(int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return d(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  // Uniform draw from the probability simplex (normalized exponentials).
  std::vector<double> simplex(std::size_t n) {
    std::vector<double> v(n);
    double sum = 0.0;
    for (auto& x : v) {
      double u = uniform(0.0, 1.0);            // [0,1)
      x = -std::log1p(-u) + 1e-300;
      sum += x;
    }
    for (auto& x : v) x /= sum;
    return v;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace c2ir
