#pragma once

#include <cstdint>
#include <random>

namespace drio {

using Rng = std::mt19937_64;

/// Generator for an independent stream derived from (seed, stream). Used to
/// give every sample / grid cell its own reproducible sequence regardless of
/// evaluation order.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

}  // namespace drio
