#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sponge {

using Rng = std::mt19937_64;

// Expands a root seed into an independent per-component seed so that adding
// randomness in one component never shifts the stream of another.
std::uint64_t derive_seed(std::uint64_t root, std::string_view component);

}  // namespace sponge
