#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace drate {

using Rng = std::mt19937_64;

/// Counter-based stream derivation: the seed of stream (tags...) depends
/// only on the master seed and the tags, never on scheduling order.
std::uint64_t derive_seed(std::uint64_t master,
                          std::initializer_list<std::uint64_t> tags);

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace drate
