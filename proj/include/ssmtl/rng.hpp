#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ssmtl {

// Seeded source of uniform and standard-normal draws. Child streams derived
// with split() are independent of how many draws the parent has made.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  double normal();
  double uniform(double lo, double hi);
  std::uint64_t next_u64();
  std::vector<double> normals(std::size_t n);

  // Deterministic child generator for stream index `stream`.
  Rng split(std::uint64_t stream) const;

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace ssmtl
