#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tokensieve {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

// Seed for a named, independent stream family derived from a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

// Independent generator for one unit of work (a document, a row). Output
// depends only on (seed, key), never on the order units are processed in.
Rng substream(std::uint64_t seed, std::uint64_t key);
Rng substream(std::uint64_t seed, std::string_view key);

// Uniform double in [0, 1) from the top 53 bits.
double uniform01(Rng& rng);

// Uniform integer in [lo, hi].
std::uint64_t uniform_int(Rng& rng, std::uint64_t lo, std::uint64_t hi);

}  // namespace tokensieve
