#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rfid {

/// Named sub-generator: every consumer of randomness (data, init, batch order)
/// derives its own stream from the single user seed.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream) {
  std::uint64_t tag = 1469598103934665603ULL;  // FNV-1a
  for (char c : stream) {
    tag ^= static_cast<unsigned char>(c);
    tag *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace rfid
