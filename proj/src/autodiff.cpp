#include "sponge/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "sponge/errors.hpp"

namespace sponge::ad {

const Tensor& Var::value() const {
  if (!tape_) throw StateError("value() on an unrecorded variable");
  return tape_->value(id_);
}

Var Tape::parameter(std::string name, Tensor value) {
  Node n;
  n.value = std::move(value);
  n.parameter = std::move(name);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, Backprop backprop) {
  Node n;
  n.value = std::move(value);
  for (const auto& v : inputs) {
    if (v.tape_ != this) throw StateError("input recorded on a different tape");
    n.inputs.push_back(v.id_);
    n.needs_grad = n.needs_grad || nodes_[v.id_].needs_grad;
  }
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

namespace {

void accumulate(Tensor& into, const Tensor& g) {
  if (into.empty()) {
    into = g;
    return;
  }
  if (into.numel() != g.numel()) throw DimensionError("gradient shape mismatch during accumulation");
  for (std::size_t i = 0; i < g.numel(); ++i) into[i] += g[i];
}

}  // namespace

Gradients Tape::backward(Var loss, float seed) {
  if (loss.tape_ != this || loss.id_ >= nodes_.size()) throw StateError("backward on a variable with no recorded forward pass");
  if (backward_done_) throw StateError("backward already ran on this tape");
  if (nodes_[loss.id_].value.numel() != 1) throw StateError("backward requires a scalar loss");
  backward_done_ = true;

  nodes_[loss.id_].grad = Tensor(nodes_[loss.id_].value.shape(), seed);
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.needs_grad || !n.backprop) continue;
    const auto grads = n.backprop(*this, n.grad);
    for (std::size_t i = 0; i < n.inputs.size() && i < grads.size(); ++i) {
      Node& in = nodes_[n.inputs[i]];
      if (!in.needs_grad || grads[i].empty()) continue;
      accumulate(in.grad, grads[i]);
    }
  }

  Gradients out;
  for (const auto& n : nodes_) {
    if (n.parameter.empty()) continue;
    Tensor g = n.grad.empty() ? Tensor(n.value.shape(), 0.0f) : n.grad.reshaped(n.value.shape());
    auto it = out.find(n.parameter);
    if (it == out.end()) {
      out.emplace(n.parameter, std::move(g));
    } else {
      accumulate(it->second, g);
    }
  }
  return out;
}

const Tensor& Tape::grad(Var v) const {
  if (v.tape_ != this) throw StateError("grad() of a variable from another tape");
  return nodes_.at(v.id_).grad;
}

namespace {

Tape& tape_of(Var v) {
  if (!v.valid()) throw StateError("operation on an unrecorded variable");
  return *v.tape();
}

}  // namespace

Var dense(Var input, Var weight, std::optional<Var> bias) {
  Tape& t = tape_of(input);
  Tensor out = ops::dense_forward(input.value(), weight.value(), bias ? &bias->value() : nullptr);
  std::vector<Var> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  const auto xi = input.id(), wi = weight.id();
  return t.record(std::move(out), inputs, [xi, wi, has_bias](const Tape& tp, const Tensor& go) {
    auto g = ops::dense_backward(tp.value(xi), tp.value(wi), has_bias, go);
    std::vector<Tensor> r{std::move(g.input), std::move(g.weight)};
    if (has_bias) r.push_back(std::move(g.bias));
    return r;
  });
}

Var conv2d(Var input, Var weight, std::optional<Var> bias, ops::ConvGeometry geometry) {
  Tape& t = tape_of(input);
  Tensor out = ops::conv2d_forward(input.value(), weight.value(), bias ? &bias->value() : nullptr, geometry);
  std::vector<Var> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  const auto xi = input.id(), wi = weight.id();
  return t.record(std::move(out), inputs, [xi, wi, has_bias, geometry](const Tape& tp, const Tensor& go) {
    auto g = ops::conv2d_backward(tp.value(xi), tp.value(wi), has_bias, go, geometry);
    std::vector<Tensor> r{std::move(g.input), std::move(g.weight)};
    if (has_bias) r.push_back(std::move(g.bias));
    return r;
  });
}

Var relu(Var input) {
  Tape& t = tape_of(input);
  const auto xi = input.id();
  return t.record(ops::relu_forward(input.value()), {input}, [xi](const Tape& tp, const Tensor& go) {
    return std::vector<Tensor>{ops::relu_backward(tp.value(xi), go)};
  });
}

Var leaky_relu(Var input, float slope) {
  Tape& t = tape_of(input);
  const auto xi = input.id();
  return t.record(ops::leaky_relu_forward(input.value(), slope), {input}, [xi, slope](const Tape& tp, const Tensor& go) {
    return std::vector<Tensor>{ops::leaky_relu_backward(tp.value(xi), slope, go)};
  });
}

Var tanh(Var input) {
  Tape& t = tape_of(input);
  Tensor out = ops::tanh_forward(input.value());
  const auto self = t.size();
  return t.record(std::move(out), {input}, [self](const Tape& tp, const Tensor& go) {
    return std::vector<Tensor>{ops::tanh_backward(tp.value(self), go)};
  });
}

Var pool(Var input, ops::PoolKind kind, ops::PoolGeometry geometry) {
  Tape& t = tape_of(input);
  const auto xi = input.id();
  return t.record(ops::pool_forward(input.value(), kind, geometry), {input},
                  [xi, kind, geometry](const Tape& tp, const Tensor& go) {
                    return std::vector<Tensor>{ops::pool_backward(tp.value(xi), kind, geometry, go)};
                  });
}

Var batchnorm(Var input, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var, float eps) {
  Tape& t = tape_of(input);
  Tensor out = ops::batchnorm_infer(input.value(), gamma.value(), beta.value(), running_mean, running_var, eps);
  const auto xi = input.id(), gi = gamma.id();
  return t.record(std::move(out), {input, gamma, beta},
                  [xi, gi, running_mean, running_var, eps](const Tape& tp, const Tensor& go) {
                    auto g = ops::batchnorm_backward(tp.value(xi), tp.value(gi), running_mean, running_var, eps, go);
                    return std::vector<Tensor>{std::move(g.input), std::move(g.gamma), std::move(g.beta)};
                  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.numel() != bv.numel()) throw DimensionError("add of tensors with different element counts");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const Shape as = av.shape(), bs = bv.shape();
  return t.record(std::move(out), {a, b}, [as, bs](const Tape&, const Tensor& go) {
    return std::vector<Tensor>{go.reshaped(as), go.reshaped(bs)};
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.numel() != bv.numel()) throw DimensionError("mul of tensors with different element counts");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const auto ai = a.id(), bi = b.id();
  return t.record(std::move(out), {a, b}, [ai, bi](const Tape& tp, const Tensor& go) {
    const Tensor& x = tp.value(ai);
    const Tensor& y = tp.value(bi);
    Tensor gx(x.shape()), gy(y.shape());
    for (std::size_t i = 0; i < go.numel(); ++i) {
      gx[i] = go[i] * y[i];
      gy[i] = go[i] * x[i];
    }
    return std::vector<Tensor>{std::move(gx), std::move(gy)};
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v = static_cast<float>(double(v) * factor);
  return t.record(std::move(out), {a}, [factor](const Tape&, const Tensor& go) {
    Tensor g = go;
    for (auto& v : g.data()) v = static_cast<float>(double(v) * factor);
    return std::vector<Tensor>{std::move(g)};
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  const Shape shape = a.value().shape();
  return t.record(Tensor::scalar(static_cast<float>(acc)), {a}, [shape](const Tape&, const Tensor& go) {
    return std::vector<Tensor>{Tensor(shape, go[0])};
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  Tape& t = tape_of(logits);
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw DimensionError("cross_entropy expects [batch, classes] logits");
  const std::size_t batch = z.dim(0), classes = z.dim(1);
  if (labels.size() != batch) throw DimensionError("cross_entropy label count does not match batch");
  std::vector<double> probs(z.numel());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw DomainError("label out of range: " + std::to_string(y));
    double mx = z[b * classes];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, double(z[b * classes + c]));
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(double(z[b * classes + c]) - mx);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(double(z[b * classes + c]) - mx) / denom;
    loss += -(double(z[b * classes + std::size_t(y)]) - mx - std::log(denom));
  }
  loss /= double(batch);
  std::vector<int> ys(labels.begin(), labels.end());
  const Shape shape = z.shape();
  return t.record(Tensor::scalar(static_cast<float>(loss)), {logits},
                  [probs = std::move(probs), ys = std::move(ys), shape, batch, classes](const Tape&, const Tensor& go) {
                    Tensor g(shape);
                    const double s = double(go[0]) / double(batch);
                    for (std::size_t b = 0; b < batch; ++b) {
                      for (std::size_t c = 0; c < classes; ++c) {
                        const double onehot = static_cast<std::size_t>(ys[b]) == c ? 1.0 : 0.0;
                        g[b * classes + c] = static_cast<float>(s * (probs[b * classes + c] - onehot));
                      }
                    }
                    return std::vector<Tensor>{std::move(g)};
                  });
}

Var mse(Var output, const Tensor& target) {
  Tape& t = tape_of(output);
  const Tensor& y = output.value();
  if (y.numel() != target.numel()) throw DimensionError("mse target element count mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double d = double(y[i]) - double(target[i]);
    acc += d * d;
  }
  const double n = double(y.numel());
  const auto yi = output.id();
  return t.record(Tensor::scalar(static_cast<float>(acc / n)), {output}, [yi, target, n](const Tape& tp, const Tensor& go) {
    const Tensor& yv = tp.value(yi);
    Tensor g(yv.shape());
    for (std::size_t i = 0; i < yv.numel(); ++i) {
      g[i] = static_cast<float>(double(go[0]) * 2.0 * (double(yv[i]) - double(target[i])) / n);
    }
    return std::vector<Tensor>{std::move(g)};
  });
}

Var l0_hat(Var input, double sigma, std::span<const bool> row_mask) {
  if (!(sigma > 0.0)) throw DomainError("l0_hat sigma must be positive");
  Tape& t = tape_of(input);
  const Tensor& x = input.value();
  const std::size_t rows = x.dim(0);
  const std::size_t per_row = x.numel() / rows;
  if (!row_mask.empty() && row_mask.size() != rows) throw DimensionError("l0_hat mask length does not match rows");
  std::vector<bool> mask(rows, true);
  if (!row_mask.empty()) mask.assign(row_mask.begin(), row_mask.end());
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    for (std::size_t j = 0; j < per_row; ++j) {
      const double v = x[r * per_row + j];
      acc += v * v / (v * v + sigma);
    }
  }
  const auto xi = input.id();
  return t.record(Tensor::scalar(static_cast<float>(acc)), {input},
                  [xi, sigma, mask = std::move(mask), per_row](const Tape& tp, const Tensor& go) {
                    const Tensor& xv = tp.value(xi);
                    Tensor g(xv.shape(), 0.0f);
                    for (std::size_t r = 0; r < mask.size(); ++r) {
                      if (!mask[r]) continue;
                      for (std::size_t j = 0; j < per_row; ++j) {
                        const double v = xv[r * per_row + j];
                        const double d = v * v + sigma;
                        g[r * per_row + j] = static_cast<float>(double(go[0]) * 2.0 * v * sigma / (d * d));
                      }
                    }
                    return std::vector<Tensor>{std::move(g)};
                  });
}

}  // namespace sponge::ad
