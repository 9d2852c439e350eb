#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dualpath {

// Derives an independent stream seed from a master seed and a purpose label,
// e.g. derive_seed(seed, "shuffle", epoch). Stable across platforms.
std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose, std::uint64_t index = 0);

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view purpose, std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(master, purpose, index));
}

}  // namespace dualpath
