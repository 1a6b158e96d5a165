#include "fixtures.hpp"

#include <random>

using namespace sponge;

namespace fixtures {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(u(rng));
  return Tensor(shape, std::move(v));
}

Tensor random_batch(const Shape& sample_shape, std::size_t rows, std::uint64_t seed, double zero_fraction) {
  Shape shape{rows};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::bernoulli_distribution zero(zero_fraction);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = zero(rng) ? 0.0f : static_cast<float>(u(rng));
  return Tensor(shape, std::move(v));
}

ModelGraph random_model(std::uint64_t seed, std::size_t max_layers) {
  Rng rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  const bool image = pick(0, 2) > 0;
  Shape input = image ? Shape{pick(1, 3), pick(4, 7), pick(4, 7)} : Shape{pick(2, 12)};
  ModelBuilder b(input, seed);
  Shape cur = input;
  const std::size_t layers = pick(1, max_layers);
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string name = "l" + std::to_string(i);
    const bool spatial = cur.size() == 3;
    const std::size_t kind = pick(0, 7);
    if (kind == 0 || (!spatial && kind >= 5)) {
      const std::size_t out = pick(1, 10);
      b.dense(name, out, pick(0, 3) > 0);
      cur = {out};
    } else if (kind == 1 && spatial) {
      const std::size_t k = pick(1, std::min<std::size_t>(3, std::min(cur[1], cur[2]))), st = pick(1, 2), pad = pick(0, 1);
      const std::size_t out = pick(1, 4);
      b.conv2d(name, out, k, st, pad, pick(0, 3) > 0);
      cur = {out, (cur[1] + 2 * pad - k) / st + 1, (cur[2] + 2 * pad - k) / st + 1};
    } else if (kind == 1 || kind == 2) {
      b.relu(name);
    } else if (kind == 3) {
      b.leaky_relu(name, 0.1f);
    } else if (kind == 4) {
      b.tanh(name);
    } else if (kind == 5 && cur[1] >= 2 && cur[2] >= 2) {
      b.maxpool(name, 2, pick(1, 2));
      cur = b.build().activation_shapes().back();
    } else if (kind == 6 && cur[1] >= 2 && cur[2] >= 2) {
      b.avgpool(name, 2, 2);
      cur = b.build().activation_shapes().back();
    } else if (kind == 7) {
      b.batchnorm(name);
    } else {
      b.relu(name);
    }
  }
  ModelGraph m = b.build();
  std::uint64_t k = 0;
  for (const auto& [name, t] : m.parameters()) {
    const bool var = name.find("running_var") != std::string::npos;
    m.set_parameter(name, random_tensor(t.shape(), derive_seed(seed, name + std::to_string(k++)), var ? 0.2 : -1.0,
                                        var ? 2.0 : 1.0));
  }
  return m;
}

Split blob_images(std::uint64_t seed) {
  BlobsConfig c;
  c.classes = 4;
  c.samples_per_class = 600;
  c.shape = {1, 8, 8};
  c.seed = seed;
  c.center_spread = 2.0;
  c.noise = 0.5;
  c.clamp_unit = true;
  return split(synth_blobs(c), 1.0 / 6.0, seed);
}

const BlobCnn& blob_cnn() {
  static const BlobCnn cached = [] {
    BlobCnn f;
    f.data = blob_images(1);
    f.train.epochs = 10;
    f.train.batch_size = 32;
    f.train.learning_rate = 0.02;
    f.train.seed = 1;
    const ModelGraph init = ModelBuilder({1, 8, 8}, 1)
                                .conv2d("conv1", 8, 3, 1, 1)
                                .relu("relu1")
                                .maxpool("pool1")
                                .conv2d("conv2", 8, 3, 1, 1)
                                .relu("relu2")
                                .dense("fc", 4)
                                .build();
    f.clean = train(init, f.data.train, f.train).model;
    f.subset = subset(f.data.train, 0.01, 1);
    f.profile = profile(f.clean, f.subset.samples);
    return f;
  }();
  return cached;
}

const BlobMlp& blob_mlp() {
  static const BlobMlp cached = [] {
    BlobMlp f;
    f.data = blob_images(1);
    f.train.epochs = 10;
    f.train.batch_size = 32;
    f.train.learning_rate = 0.02;
    f.train.seed = 1;
    f.init = ModelBuilder({1, 8, 8}, 1).dense("fc1", 32).relu("relu1").dense("fc2", 32).relu("relu2").dense("fc3", 4).build();
    return f;
  }();
  return cached;
}

}  // namespace fixtures
