#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedlips {

using Rng = std::mt19937_64;

// Named randomness streams. A master seed fans out into independent
// sub-streams so that changing one knob never perturbs unrelated draws.
enum class Stream : std::uint64_t {
  kData = 1,
  kPartition = 2,
  kModelInit = 3,
  kClientTrain = 4,
  kClientMask = 5,
  kParticipation = 6,
  kClientInit = 7,
};

// Mixes a parent seed with up to three coordinates (stream tag, client id,
// round, ...) into a child seed. Pure function of its arguments.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0) noexcept;

inline std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t a = 0,
                                 std::uint64_t b = 0) noexcept {
  return derive_seed(master, static_cast<std::uint64_t>(stream), a, b);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace fedlips
