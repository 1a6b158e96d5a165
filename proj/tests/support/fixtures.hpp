#pragma once

#include <cstdint>

#include "sponge/datasets.hpp"
#include "sponge/evaluation.hpp"
#include "sponge/model.hpp"
#include "sponge/poison.hpp"
#include "sponge/profiler.hpp"

namespace fixtures {

// Random sequential model of 1..max_layers layers over a random input shape
// (flat vector or small image) with every parameter drawn at random.
sponge::ModelGraph random_model(std::uint64_t seed, std::size_t max_layers = 4);

// Uniform values in [-1, 1) with roughly `zero_fraction` exact zeros.
sponge::Tensor random_batch(const sponge::Shape& sample_shape, std::size_t rows, std::uint64_t seed,
                            double zero_fraction = 0.3);

sponge::Tensor random_tensor(const sponge::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

// Four 8x8 Gaussian blob classes, 500 training and 100 test samples each.
sponge::Split blob_images(std::uint64_t seed);

// conv(8) -> relu -> maxpool -> conv(8) -> relu -> dense(4) trained on
// blob_images, plus the 1% attacker subset and its activation profile.
struct BlobCnn {
  sponge::Split data;
  sponge::TrainConfig train;
  sponge::ModelGraph clean;
  sponge::Dataset subset;
  sponge::ActivationProfile profile;
};
const BlobCnn& blob_cnn();

// dense(32) -> relu -> dense(32) -> relu -> dense(4) with its initial
// parameters and the shared training configuration.
struct BlobMlp {
  sponge::Split data;
  sponge::TrainConfig train;
  sponge::ModelGraph init;
};
const BlobMlp& blob_mlp();

}  // namespace fixtures
