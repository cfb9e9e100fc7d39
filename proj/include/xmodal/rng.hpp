#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace xmodal {

// splitmix64 step; used to derive well-mixed seeds from small integers.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic sub-seed for a (purpose, indices...) path under a master
// seed. Every random draw site in the pipeline gets its own stream so that
// runs are reproducible and resumable from a checkpoint.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t p : path) s = splitmix64(s ^ splitmix64(p));
  return s;
}

inline std::mt19937_64 make_engine(std::uint64_t master,
                                   std::initializer_list<std::uint64_t> path) {
  return std::mt19937_64(derive_seed(master, path));
}

// Stream tags so distinct purposes never collide.
enum SeedTag : std::uint64_t {
  kSeedInit = 1,
  kSeedBatch = 2,
  kSeedDropout = 3,
  kSeedData = 4,
  kSeedEval = 5,
};

}  // namespace xmodal
