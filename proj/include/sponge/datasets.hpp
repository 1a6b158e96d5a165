#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sponge/tensor.hpp"

namespace sponge {

struct Manifest {
  std::string name;
  Shape sample_shape;
  double dynamic_range = 1.0;
  std::map<std::string, std::size_t> splits;
  std::uint64_t seed = 0;

  bool operator==(const Manifest&) const = default;
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);

// Samples stacked along axis 0 with optional integer labels.
struct Dataset {
  Tensor samples;
  std::optional<std::vector<int>> labels;
  Manifest manifest;

  Dataset() = default;
  Dataset(Tensor samples, std::optional<std::vector<int>> labels, Manifest manifest);

  std::size_t size() const { return samples.empty() ? 0 : samples.dim(0); }
  bool has_labels() const { return labels.has_value(); }
  const std::vector<int>& label_vector() const;

  Tensor rows(std::size_t begin, std::size_t end) const { return slice_rows(samples, begin, end); }
  std::span<const int> label_rows(std::size_t begin, std::size_t end) const;
};

// MNIST-style IDX files: big-endian headers, magic 0x00000803 for images
// and 0x00000801 for labels. Pixels are scaled to [0, 1]; samples are [1, rows, cols].
Dataset load_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels = {});

// Writers used for fixtures and for exporting synthetic data.
void write_idx_images(const std::filesystem::path& path, const std::vector<std::vector<std::uint8_t>>& images,
                      std::uint32_t rows, std::uint32_t cols);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

// CSV with a header row. A column named "label" becomes the label vector;
// every other column is a float feature. Samples are [features].
Dataset load_csv(const std::filesystem::path& path);

struct BlobsConfig {
  std::size_t classes = 4;
  std::size_t samples_per_class = 100;
  Shape shape{2};
  std::uint64_t seed = 0;
  double center_spread = 1.0;  // std-dev of class centers per element
  double noise = 0.5;          // std-dev of samples around their center
  bool clamp_unit = false;     // clamp samples into [0, 1]
};

// Seeded Gaussian clusters, one per class, samples interleaved by class.
Dataset synth_blobs(const BlobsConfig& config);

// Rows picked by index (in the given order).
Dataset take(const Dataset& data, std::span<const std::size_t> indices);

// Seeded sample without replacement of round(fraction * N) rows, stratified
// by label (largest-remainder allocation) when labels exist. Selected rows
// keep their original relative order.
Dataset subset(const Dataset& data, double fraction, std::uint64_t seed);

struct Split {
  Dataset train;
  Dataset test;
};

// Stratified train/test partition.
Split split(const Dataset& data, double test_fraction, std::uint64_t seed);

}  // namespace sponge
