#include "sponge/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sponge/errors.hpp"
#include "sponge/ops.hpp"

namespace sponge {

namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::dense, "dense"},         {LayerKind::conv2d, "conv2d"},   {LayerKind::relu, "relu"},
    {LayerKind::leaky_relu, "leaky_relu"}, {LayerKind::maxpool, "maxpool"}, {LayerKind::avgpool, "avgpool"},
    {LayerKind::batchnorm, "batchnorm"}, {LayerKind::tanh, "tanh"},
};

[[noreturn]] void layer_error(const LayerSpec& layer, const std::string& what) {
  throw DimensionError("layer '" + layer.name + "': " + what);
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, n] : kKindNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view text) {
  for (const auto& [k, n] : kKindNames) {
    if (n == text) return k;
  }
  throw ConfigError("unknown layer kind '" + std::string(text) + "'");
}

bool is_sparsity_kind(LayerKind kind) {
  return kind == LayerKind::relu || kind == LayerKind::maxpool || kind == LayerKind::avgpool;
}

bool is_trainable_role(std::string_view r) {
  return r == role::weight || r == role::bias || r == role::gamma || r == role::beta;
}

ModelGraph::ModelGraph(Shape input_shape, std::vector<LayerSpec> layers, std::map<std::string, Tensor> parameters)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), parameters_(std::move(parameters)) {
  validate();
}

void ModelGraph::validate() {
  if (input_shape_.empty() || shape_numel(input_shape_) == 0) throw DimensionError("model input shape must be non-empty");
  std::set<std::string> names;
  shapes_.assign(1, input_shape_);
  for (const auto& layer : layers_) {
    if (layer.name.empty()) throw ConfigError("layer with empty name");
    if (!names.insert(layer.name).second) throw ConfigError("duplicate layer name '" + layer.name + "'");
    for (const auto& [r, tensor] : layer.params) {
      if (!parameters_.count(tensor)) {
        throw ConfigError("layer '" + layer.name + "' references missing tensor '" + tensor + "'");
      }
    }
    const Shape in = shapes_.back();
    auto need = [&](std::string_view r) -> const Tensor& {
      const Tensor* t = layer_param(layer, r);
      if (!t) layer_error(layer, "missing " + std::string(r) + " tensor");
      return *t;
    };
    auto vector_of = [&](std::string_view r, std::size_t n) {
      const Tensor* t = layer_param(layer, r);
      if (t && (t->rank() != 1 || t->dim(0) != n)) {
        layer_error(layer, std::string(r) + " must have " + std::to_string(n) + " entries, got " + shape_to_string(t->shape()));
      }
    };
    Shape out;
    switch (layer.kind) {
      case LayerKind::dense: {
        const Tensor& w = need(role::weight);
        if (w.rank() != 2 || w.dim(1) != shape_numel(in)) {
          layer_error(layer, "weight " + shape_to_string(w.shape()) + " does not accept input " + shape_to_string(in));
        }
        vector_of(role::bias, w.dim(0));
        out = {w.dim(0)};
        break;
      }
      case LayerKind::conv2d: {
        const Tensor& w = need(role::weight);
        if (in.size() != 3) layer_error(layer, "conv2d needs [c, h, w] input, got " + shape_to_string(in));
        if (w.rank() != 4 || w.dim(1) != in[0]) {
          layer_error(layer, "weight " + shape_to_string(w.shape()) + " does not accept input " + shape_to_string(in));
        }
        if (layer.attrs.stride == 0) layer_error(layer, "stride must be positive");
        vector_of(role::bias, w.dim(0));
        try {
          out = {w.dim(0), ops::sweep_extent(in[1], w.dim(2), layer.attrs.stride, layer.attrs.padding),
                 ops::sweep_extent(in[2], w.dim(3), layer.attrs.stride, layer.attrs.padding)};
        } catch (const DimensionError& e) {
          layer_error(layer, e.what());
        }
        break;
      }
      case LayerKind::maxpool:
      case LayerKind::avgpool: {
        if (in.size() != 3) layer_error(layer, "pooling needs [c, h, w] input, got " + shape_to_string(in));
        if (layer.attrs.window == 0 || layer.attrs.stride == 0) layer_error(layer, "window and stride must be positive");
        try {
          out = {in[0], ops::sweep_extent(in[1], layer.attrs.window, layer.attrs.stride, 0),
                 ops::sweep_extent(in[2], layer.attrs.window, layer.attrs.stride, 0)};
        } catch (const DimensionError& e) {
          layer_error(layer, e.what());
        }
        break;
      }
      case LayerKind::batchnorm: {
        for (auto r : {role::gamma, role::beta, role::running_mean, role::running_var}) {
          need(r);
          vector_of(r, in[0]);
        }
        out = in;
        break;
      }
      case LayerKind::relu:
      case LayerKind::leaky_relu:
      case LayerKind::tanh:
        out = in;
        break;
    }
    shapes_.push_back(std::move(out));
  }
}

std::size_t ModelGraph::layer_index(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw ConfigError("no layer named '" + std::string(name) + "'");
}

const Tensor& ModelGraph::parameter(const std::string& name) const {
  auto it = parameters_.find(name);
  if (it == parameters_.end()) throw ConfigError("no parameter named '" + name + "'");
  return it->second;
}

void ModelGraph::set_parameter(const std::string& name, Tensor value) {
  auto it = parameters_.find(name);
  if (it == parameters_.end()) throw ConfigError("no parameter named '" + name + "'");
  if (it->second.shape() != value.shape()) {
    throw DimensionError("parameter '" + name + "' shape " + shape_to_string(it->second.shape()) + " cannot become " +
                         shape_to_string(value.shape()));
  }
  it->second = std::move(value);
}

std::span<float> ModelGraph::parameter_data(const std::string& name) {
  auto it = parameters_.find(name);
  if (it == parameters_.end()) throw ConfigError("no parameter named '" + name + "'");
  return it->second.data();
}

const Tensor* ModelGraph::layer_param(const LayerSpec& layer, std::string_view r) const {
  auto it = layer.params.find(std::string(r));
  if (it == layer.params.end()) return nullptr;
  auto p = parameters_.find(it->second);
  return p == parameters_.end() ? nullptr : &p->second;
}

std::vector<std::string> ModelGraph::parameter_names(std::string_view r, std::optional<LayerKind> kind) const {
  std::vector<std::string> out;
  for (const auto& layer : layers_) {
    if (kind && layer.kind != *kind) continue;
    auto it = layer.params.find(std::string(r));
    if (it != layer.params.end()) out.push_back(it->second);
  }
  return out;
}

bool ModelGraph::operator==(const ModelGraph& other) const {
  return input_shape_ == other.input_shape_ && layers_ == other.layers_ && parameters_ == other.parameters_;
}

bool ModelGraph::bit_equal(const ModelGraph& other) const {
  if (input_shape_ != other.input_shape_ || layers_ != other.layers_) return false;
  if (parameters_.size() != other.parameters_.size()) return false;
  for (const auto& [name, t] : parameters_) {
    auto it = other.parameters_.find(name);
    if (it == other.parameters_.end() || !t.bit_equal(it->second)) return false;
  }
  return true;
}

namespace {

void check_batch(const ModelGraph& model, const Tensor& batch) {
  Shape expected{batch.rank() > 0 ? batch.dim(0) : 0};
  expected.insert(expected.end(), model.input_shape().begin(), model.input_shape().end());
  if (batch.shape() != expected) {
    throw DimensionError("batch shape " + shape_to_string(batch.shape()) + " does not match model input " +
                         shape_to_string(model.input_shape()));
  }
}

Tensor with_batch_shape(Tensor t, std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return t.reshaped(std::move(s));
}

ops::PoolKind pool_kind(LayerKind k) { return k == LayerKind::maxpool ? ops::PoolKind::max : ops::PoolKind::avg; }

}  // namespace

Activations forward_all(const ModelGraph& model, const Tensor& batch) {
  check_batch(model, batch);
  Activations acts;
  acts.reserve(model.layers().size() + 1);
  acts.push_back(batch);
  const std::size_t n = batch.dim(0);
  const auto& shapes = model.activation_shapes();
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto& layer = model.layers()[i];
    const Tensor& x = acts.back();
    Tensor y;
    switch (layer.kind) {
      case LayerKind::dense:
        y = ops::dense_forward(x, *model.layer_param(layer, role::weight), model.layer_param(layer, role::bias));
        break;
      case LayerKind::conv2d:
        y = ops::conv2d_forward(x, *model.layer_param(layer, role::weight), model.layer_param(layer, role::bias),
                                {layer.attrs.stride, layer.attrs.padding});
        break;
      case LayerKind::relu:
        y = ops::relu_forward(x);
        break;
      case LayerKind::leaky_relu:
        y = ops::leaky_relu_forward(x, layer.attrs.slope);
        break;
      case LayerKind::tanh:
        y = ops::tanh_forward(x);
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        y = ops::pool_forward(x, pool_kind(layer.kind), {layer.attrs.window, layer.attrs.stride});
        break;
      case LayerKind::batchnorm:
        y = ops::batchnorm_infer(x, *model.layer_param(layer, role::gamma), *model.layer_param(layer, role::beta),
                                 *model.layer_param(layer, role::running_mean),
                                 *model.layer_param(layer, role::running_var), layer.attrs.eps);
        break;
    }
    acts.push_back(with_batch_shape(std::move(y), n, shapes[i + 1]));
  }
  return acts;
}

Tensor forward(const ModelGraph& model, const Tensor& batch) { return std::move(forward_all(model, batch).back()); }

std::vector<ad::Var> forward_on_tape(ad::Tape& tape, const ModelGraph& model, const Tensor& batch) {
  check_batch(model, batch);
  std::map<std::string, ad::Var> leaves;
  auto param = [&](const LayerSpec& layer, std::string_view r) -> std::optional<ad::Var> {
    auto it = layer.params.find(std::string(r));
    if (it == layer.params.end()) return std::nullopt;
    auto found = leaves.find(it->second);
    if (found != leaves.end()) return found->second;
    ad::Var v = tape.parameter(it->second, model.parameter(it->second));
    leaves.emplace(it->second, v);
    return v;
  };
  std::vector<ad::Var> outs;
  ad::Var x = tape.constant(batch);
  for (const auto& layer : model.layers()) {
    switch (layer.kind) {
      case LayerKind::dense:
        x = ad::dense(x, *param(layer, role::weight), param(layer, role::bias));
        break;
      case LayerKind::conv2d:
        x = ad::conv2d(x, *param(layer, role::weight), param(layer, role::bias), {layer.attrs.stride, layer.attrs.padding});
        break;
      case LayerKind::relu:
        x = ad::relu(x);
        break;
      case LayerKind::leaky_relu:
        x = ad::leaky_relu(x, layer.attrs.slope);
        break;
      case LayerKind::tanh:
        x = ad::tanh(x);
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        x = ad::pool(x, pool_kind(layer.kind), {layer.attrs.window, layer.attrs.stride});
        break;
      case LayerKind::batchnorm:
        x = ad::batchnorm(x, *param(layer, role::gamma), *param(layer, role::beta),
                          *model.layer_param(layer, role::running_mean), *model.layer_param(layer, role::running_var),
                          layer.attrs.eps);
        break;
    }
    outs.push_back(x);
  }
  return outs;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.dim(0);
  const std::size_t cols = logits.numel() / rows;
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (logits[r * cols + c] > logits[r * cols + best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

ModelBuilder::ModelBuilder(Shape input_shape, std::uint64_t seed)
    : input_shape_(input_shape), current_(std::move(input_shape)), rng_(derive_seed(seed, "model-init")) {}

void ModelBuilder::push(LayerSpec spec, Shape out_shape) {
  layers_.push_back(std::move(spec));
  current_ = std::move(out_shape);
}

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

}  // namespace

ModelBuilder& ModelBuilder::dense(std::string name, std::size_t out, bool bias) {
  const std::size_t in = shape_numel(current_);
  LayerSpec spec{name, LayerKind::dense, {}, {}};
  spec.params["weight"] = name + ".weight";
  params_[name + ".weight"] = he_normal({out, in}, in, rng_);
  if (bias) {
    spec.params["bias"] = name + ".bias";
    params_[name + ".bias"] = Tensor({out});
  }
  push(std::move(spec), {out});
  return *this;
}

ModelBuilder& ModelBuilder::conv2d(std::string name, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                                   std::size_t padding, bool bias) {
  if (current_.size() != 3) throw DimensionError("conv2d '" + name + "' needs [c, h, w] input");
  const std::size_t c = current_[0];
  LayerSpec spec{name, LayerKind::conv2d, {}, {}};
  spec.attrs.stride = stride;
  spec.attrs.padding = padding;
  spec.params["weight"] = name + ".weight";
  params_[name + ".weight"] = he_normal({out_channels, c, kernel, kernel}, c * kernel * kernel, rng_);
  if (bias) {
    spec.params["bias"] = name + ".bias";
    params_[name + ".bias"] = Tensor({out_channels});
  }
  const Shape out{out_channels, ops::sweep_extent(current_[1], kernel, stride, padding),
                  ops::sweep_extent(current_[2], kernel, stride, padding)};
  push(std::move(spec), out);
  return *this;
}

ModelBuilder& ModelBuilder::relu(std::string name) {
  push({std::move(name), LayerKind::relu, {}, {}}, current_);
  return *this;
}

ModelBuilder& ModelBuilder::leaky_relu(std::string name, float slope) {
  LayerSpec spec{std::move(name), LayerKind::leaky_relu, {}, {}};
  spec.attrs.slope = slope;
  push(std::move(spec), current_);
  return *this;
}

ModelBuilder& ModelBuilder::tanh(std::string name) {
  push({std::move(name), LayerKind::tanh, {}, {}}, current_);
  return *this;
}

ModelBuilder& ModelBuilder::maxpool(std::string name, std::size_t window, std::size_t stride) {
  if (current_.size() != 3) throw DimensionError("maxpool '" + name + "' needs [c, h, w] input");
  LayerSpec spec{std::move(name), LayerKind::maxpool, {}, {}};
  spec.attrs.window = window;
  spec.attrs.stride = stride;
  const Shape out{current_[0], ops::sweep_extent(current_[1], window, stride, 0),
                  ops::sweep_extent(current_[2], window, stride, 0)};
  push(std::move(spec), out);
  return *this;
}

ModelBuilder& ModelBuilder::avgpool(std::string name, std::size_t window, std::size_t stride) {
  maxpool(std::move(name), window, stride);
  layers_.back().kind = LayerKind::avgpool;
  return *this;
}

ModelBuilder& ModelBuilder::batchnorm(std::string name, float eps) {
  const std::size_t c = current_.at(0);
  LayerSpec spec{name, LayerKind::batchnorm, {}, {}};
  spec.attrs.eps = eps;
  spec.params["gamma"] = name + ".gamma";
  spec.params["beta"] = name + ".beta";
  spec.params["running_mean"] = name + ".running_mean";
  spec.params["running_var"] = name + ".running_var";
  params_[name + ".gamma"] = Tensor({c}, 1.0f);
  params_[name + ".beta"] = Tensor({c}, 0.0f);
  params_[name + ".running_mean"] = Tensor({c}, 0.0f);
  params_[name + ".running_var"] = Tensor({c}, 1.0f);
  push(std::move(spec), current_);
  return *this;
}

ModelGraph ModelBuilder::build() const { return ModelGraph(input_shape_, layers_, params_); }

std::vector<std::string> identify_sparsity_layers(const ModelGraph& model) {
  std::vector<std::string> out;
  const auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto kind = layers[i].kind;
    if (!is_sparsity_kind(kind)) continue;
    const bool pool = kind == LayerKind::maxpool || kind == LayerKind::avgpool;
    if (pool && i > 0 && layers[i - 1].kind == LayerKind::relu) continue;
    out.push_back(layers[i].name);
  }
  return out;
}

std::optional<std::string> bias_like_tensor(const LayerSpec& layer) {
  std::string_view r;
  switch (layer.kind) {
    case LayerKind::dense:
    case LayerKind::conv2d:
      r = role::bias;
      break;
    case LayerKind::batchnorm:
      r = role::beta;
      break;
    default:
      return std::nullopt;
  }
  auto it = layer.params.find(std::string(r));
  if (it == layer.params.end()) return std::nullopt;
  return it->second;
}

TargetLayerSet identify_target_layers(const ModelGraph& model) {
  TargetLayerSet set;
  for (const auto& name : identify_sparsity_layers(model)) {
    const std::size_t i = model.layer_index(name);
    if (i == 0) {
      set.warnings.push_back("sparsity layer '" + name + "' has no preceding layer; skipped");
      continue;
    }
    const auto& prev = model.layers()[i - 1];
    auto bias = bias_like_tensor(prev);
    if (!bias) {
      set.warnings.push_back("sparsity layer '" + name + "' is preceded by '" + prev.name +
                             "' which has no bias parameter; skipped");
      continue;
    }
    set.pairs.push_back({prev.name, name, *bias, i - 1});
  }
  return set;
}

}  // namespace sponge
