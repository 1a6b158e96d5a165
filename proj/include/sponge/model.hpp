#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sponge/autodiff.hpp"
#include "sponge/random.hpp"
#include "sponge/tensor.hpp"

namespace sponge {

enum class LayerKind { dense, conv2d, relu, leaky_relu, maxpool, avgpool, batchnorm, tanh };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view text);

// relu, maxpool and avgpool emit exact zeros that a zero-skipping
// accelerator can exploit.
bool is_sparsity_kind(LayerKind kind);

struct LayerAttrs {
  std::size_t stride = 1;   // conv2d, pools
  std::size_t padding = 0;  // conv2d
  std::size_t window = 2;   // pools
  float eps = 1e-5f;        // batchnorm
  float slope = 0.01f;      // leaky_relu

  bool operator==(const LayerAttrs&) const = default;
};

// Parameter roles a layer may reference. Trainable roles are weight, bias,
// gamma and beta; running statistics are frozen.
namespace role {
inline constexpr std::string_view weight = "weight";
inline constexpr std::string_view bias = "bias";
inline constexpr std::string_view gamma = "gamma";
inline constexpr std::string_view beta = "beta";
inline constexpr std::string_view running_mean = "running_mean";
inline constexpr std::string_view running_var = "running_var";
}  // namespace role

bool is_trainable_role(std::string_view r);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  LayerAttrs attrs;
  std::map<std::string, std::string> params;  // role -> tensor name

  bool operator==(const LayerSpec&) const = default;
};

// Sequential chain of layers over a declared per-sample input shape.
// Construction validates names, parameter references and end-to-end shapes.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(Shape input_shape, std::vector<LayerSpec> layers, std::map<std::string, Tensor> parameters);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::map<std::string, Tensor>& parameters() const { return parameters_; }

  std::size_t layer_index(std::string_view name) const;
  const LayerSpec& layer(std::string_view name) const { return layers_[layer_index(name)]; }

  const Tensor& parameter(const std::string& name) const;
  // Replaces a parameter's data. The shape must not change.
  void set_parameter(const std::string& name, Tensor value);
  // In-place access for attack/defense updates; shape is fixed by construction.
  std::span<float> parameter_data(const std::string& name);

  // Tensor referenced by `layer` under `r`, or null when the layer has none.
  const Tensor* layer_param(const LayerSpec& layer, std::string_view r) const;

  // Per-sample shapes: [0] is the input, [i + 1] the output of layer i.
  const std::vector<Shape>& activation_shapes() const { return shapes_; }

  // Tensor names owned by layers of the given kinds.
  std::vector<std::string> parameter_names(std::string_view r, std::optional<LayerKind> kind = {}) const;

  bool operator==(const ModelGraph& other) const;
  // Structural equality plus bit-identical parameter data.
  bool bit_equal(const ModelGraph& other) const;

 private:
  void validate();

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::map<std::string, Tensor> parameters_;
  std::vector<Shape> shapes_;
};

// [0] = input batch, [i + 1] = output of layer i.
using Activations = std::vector<Tensor>;

Activations forward_all(const ModelGraph& model, const Tensor& batch);
Tensor forward(const ModelGraph& model, const Tensor& batch);

// Records the forward pass on `tape`, registering trainable tensors as named
// parameters. Returns one Var per layer output.
std::vector<ad::Var> forward_on_tape(ad::Tape& tape, const ModelGraph& model, const Tensor& batch);

// Argmax over the last axis of [batch, classes] logits.
std::vector<int> argmax_rows(const Tensor& logits);

// Incremental construction with seeded He-normal weight init and zero biases.
class ModelBuilder {
 public:
  ModelBuilder(Shape input_shape, std::uint64_t seed);

  ModelBuilder& dense(std::string name, std::size_t out, bool bias = true);
  ModelBuilder& conv2d(std::string name, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
                       std::size_t padding = 0, bool bias = true);
  ModelBuilder& relu(std::string name);
  ModelBuilder& leaky_relu(std::string name, float slope = 0.01f);
  ModelBuilder& tanh(std::string name);
  ModelBuilder& maxpool(std::string name, std::size_t window = 2, std::size_t stride = 2);
  ModelBuilder& avgpool(std::string name, std::size_t window = 2, std::size_t stride = 2);
  ModelBuilder& batchnorm(std::string name, float eps = 1e-5f);

  ModelGraph build() const;

 private:
  void push(LayerSpec spec, Shape out_shape);

  Shape input_shape_;
  Shape current_;
  Rng rng_;
  std::vector<LayerSpec> layers_;
  std::map<std::string, Tensor> params_;
};

// Step 1 of the attack: layers that introduce exact zeros. A pool that
// directly follows a relu is dropped, since the relu already controls its zeros.
std::vector<std::string> identify_sparsity_layers(const ModelGraph& model);

struct TargetPair {
  std::string target_layer;
  std::string sparsity_layer;
  std::string bias_tensor;  // dense/conv bias or batchnorm beta
  std::size_t target_index = 0;

  bool operator==(const TargetPair&) const = default;
};

struct TargetLayerSet {
  std::vector<TargetPair> pairs;  // forward order
  std::vector<std::string> warnings;
};

// Step 2: the layer directly preceding each sparsity layer, when it owns a
// bias-like tensor. Sparsity layers without one are skipped with a warning.
TargetLayerSet identify_target_layers(const ModelGraph& model);

// Name of the bias-like tensor of `layer`, if any.
std::optional<std::string> bias_like_tensor(const LayerSpec& layer);

}  // namespace sponge
