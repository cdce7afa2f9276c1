#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace misdetect {

// Portable random stream.
//
// Bits come from std::mt19937_64, whose output sequence is fixed by the C++
// standard. The standard distributions are implementation-defined, so every
// transform is spelled out here and can be reproduced in any language:
//
//   uniform01()      = (next() >> 11) * 2^-53                  in [0, 1)
//   uniform_index(n) = rejection sampling on next():
//                      limit = 2^64 - (2^64 mod n); draw until x < limit;
//                      return x mod n
//   normal()         = Box-Muller, u1 = 1 - uniform01(), u2 = uniform01(),
//                      r = sqrt(-2 ln u1); emits r*cos(2 pi u2), then
//                      r*sin(2 pi u2) on the following call
//
// derive_seed(seed, stream) = splitmix64(seed ^ splitmix64(stream)) gives
// independent sub-streams, e.g. one per class.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform01();
  std::size_t uniform_index(std::size_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace misdetect
