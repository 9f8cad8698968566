#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace smcgcn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Single RNG type used everywhere so seeded runs replay bit-for-bit.
using Rng = std::mt19937_64;

// Derives an independent stream seed from a master seed and a tuple of ids
// (splitmix64 finalizer applied per component).
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> ids) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(master);
  for (auto id : ids) h = mix(h ^ mix(id + 0x632be59bd9b4e019ULL));
  return h;
}

}  // namespace smcgcn
