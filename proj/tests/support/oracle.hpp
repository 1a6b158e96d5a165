#pragma once

#include <cstdint>
#include <vector>

#include "sponge/energy.hpp"
#include "sponge/model.hpp"

// Independent reference implementations used to check the library.
namespace oracle {

// Double-precision forward pass written directly from the layer definitions.
// [0] is the input, [i + 1] the output of layer i, all flattened row-major.
std::vector<std::vector<double>> naive_forward(const sponge::ModelGraph& model, const sponge::Tensor& batch);

struct Tally {
  std::uint64_t mults_total = 0, mults_done = 0;
  std::uint64_t simple_total = 0, simple_done = 0;
  std::uint64_t mem_total = 0, mem_done = 0;
};

// Walks every multiplication, element-wise op and memory access of the
// recorded activations one by one and tallies which of them a
// zero-skipping accelerator performs.
Tally enumerate(const sponge::ModelGraph& model, const sponge::Activations& acts);

double worst(const Tally& t, const sponge::CostConstants& k);
double average(const Tally& t, const sponge::CostConstants& k);

}  // namespace oracle
