#include "sponge/ops.hpp"

#include <cmath>
#include <limits>

#include "sponge/errors.hpp"

namespace sponge::ops {

namespace {

struct Dense2d {
  std::size_t batch;
  std::size_t in;
  std::size_t out;
};

Dense2d dense_dims(const Tensor& input, const Tensor& weight) {
  if (input.rank() < 2) throw DimensionError("dense input needs a batch axis, got " + shape_to_string(input.shape()));
  if (weight.rank() != 2) throw DimensionError("dense weight must be [out, in], got " + shape_to_string(weight.shape()));
  const std::size_t batch = input.dim(0);
  const std::size_t in = input.numel() / batch;
  if (weight.dim(1) != in) {
    throw DimensionError("dense inner dims disagree: input " + shape_to_string(input.shape()) + " vs weight " +
                         shape_to_string(weight.shape()));
  }
  return {batch, in, weight.dim(0)};
}

struct ConvDims {
  std::size_t b, c, h, w, k, r, s, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, ConvGeometry g) {
  if (input.rank() != 4) throw DimensionError("conv2d input must be [b, c, h, w], got " + shape_to_string(input.shape()));
  if (weight.rank() != 4) throw DimensionError("conv2d weight must be [k, c, r, s], got " + shape_to_string(weight.shape()));
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d channel mismatch: input " + shape_to_string(input.shape()) + " vs weight " +
                         shape_to_string(weight.shape()));
  }
  if (g.stride == 0) throw DimensionError("conv2d stride must be positive");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0};
  d.oh = sweep_extent(d.h, d.r, g.stride, g.padding);
  d.ow = sweep_extent(d.w, d.s, g.stride, g.padding);
  return d;
}

struct PoolDims {
  std::size_t b, c, h, w, oh, ow;
};

PoolDims pool_dims(const Tensor& input, PoolGeometry g) {
  if (input.rank() != 4) throw DimensionError("pool input must be [b, c, h, w], got " + shape_to_string(input.shape()));
  if (g.window == 0 || g.stride == 0) throw DimensionError("pool window and stride must be positive");
  PoolDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), 0, 0};
  d.oh = sweep_extent(d.h, g.window, g.stride, 0);
  d.ow = sweep_extent(d.w, g.window, g.stride, 0);
  return d;
}

void check_bias(const Tensor* bias, std::size_t channels, const char* what) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != channels)) {
    throw DimensionError(std::string(what) + " bias must have " + std::to_string(channels) + " entries, got " +
                         shape_to_string(bias->shape()));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

std::size_t inner_extent(const Tensor& t) {
  std::size_t n = 1;
  for (std::size_t a = 2; a < t.rank(); ++a) n *= t.dim(a);
  return n;
}

void check_channel_vector(const Tensor& v, std::size_t channels, const char* what) {
  if (v.rank() != 1 || v.dim(0) != channels) {
    throw DimensionError(std::string("batchnorm ") + what + " must have " + std::to_string(channels) + " entries");
  }
}

}  // namespace

std::size_t sweep_extent(std::size_t extent, std::size_t window, std::size_t stride, std::size_t padding) {
  const std::size_t padded = extent + 2 * padding;
  if (window > padded) {
    throw DimensionError("window " + std::to_string(window) + " larger than padded extent " + std::to_string(padded));
  }
  return (padded - window) / stride + 1;
}

Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor* bias) {
  const auto d = dense_dims(input, weight);
  check_bias(bias, d.out, "dense");
  Tensor out({d.batch, d.out});
  const auto x = input.data();
  const auto w = weight.data();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < d.out; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d.in; ++i) acc += double(x[b * d.in + i]) * double(w[o * d.in + i]);
      if (bias) acc += double((*bias)[o]);
      out[b * d.out + o] = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias, ConvGeometry g) {
  const auto d = conv_dims(input, weight, g);
  check_bias(bias, d.k, "conv2d");
  Tensor out({d.b, d.k, d.oh, d.ow});
  const auto x = input.data();
  const auto w = weight.data();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t k = 0; k < d.k; ++k) {
      for (std::size_t oy = 0; oy < d.oh; ++oy) {
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          double acc = 0.0;
          for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t r = 0; r < d.r; ++r) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + r) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t s = 0; s < d.s; ++s) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + s) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                const float xv = x[((b * d.c + c) * d.h + std::size_t(iy)) * d.w + std::size_t(ix)];
                const float wv = w[((k * d.c + c) * d.r + r) * d.s + s];
                acc += double(xv) * double(wv);
              }
            }
          }
          if (bias) acc += double((*bias)[k]);
          out[((b * d.k + k) * d.oh + oy) * d.ow + ox] = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor leaky_relu_forward(const Tensor& input, float slope) {
  Tensor out = input;
  for (auto& v : out.data()) v = v > 0.0f ? v : slope * v;
  return out;
}

Tensor tanh_forward(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.data()) v = std::tanh(v);
  return out;
}

Tensor pool_forward(const Tensor& input, PoolKind kind, PoolGeometry g) {
  const auto d = pool_dims(input, g);
  Tensor out({d.b, d.c, d.oh, d.ow});
  const auto x = input.data();
  const double area = double(g.window * g.window);
  for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
    const float* plane = x.data() + bc * d.h * d.w;
    for (std::size_t oy = 0; oy < d.oh; ++oy) {
      for (std::size_t ox = 0; ox < d.ow; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        double sum = 0.0;
        for (std::size_t r = 0; r < g.window; ++r) {
          for (std::size_t s = 0; s < g.window; ++s) {
            const float v = plane[(oy * g.stride + r) * d.w + ox * g.stride + s];
            if (v > best) best = v;
            sum += v;
          }
        }
        out[(bc * d.oh + oy) * d.ow + ox] = kind == PoolKind::max ? best : static_cast<float>(sum / area);
      }
    }
  }
  return out;
}

Tensor batchnorm_infer(const Tensor& input, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                       const Tensor& running_var, float eps) {
  if (input.rank() < 2) throw DimensionError("batchnorm input needs [b, c, ...]");
  const std::size_t channels = input.dim(1);
  check_channel_vector(gamma, channels, "gamma");
  check_channel_vector(beta, channels, "beta");
  check_channel_vector(running_mean, channels, "running_mean");
  check_channel_vector(running_var, channels, "running_var");
  for (std::size_t c = 0; c < channels; ++c) {
    if (running_var[c] < 0.0f) throw DomainError("batchnorm running variance is negative at channel " + std::to_string(c));
  }
  if (eps < 0.0f) throw DomainError("batchnorm eps must be non-negative");
  const std::size_t inner = inner_extent(input);
  Tensor out(input.shape());
  for (std::size_t b = 0; b < input.dim(0); ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double scale = double(gamma[c]) / std::sqrt(double(running_var[c]) + double(eps));
      const std::size_t base = (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        // beta is added in float so a shift of beta moves every output by exactly that amount
        out[base + i] = static_cast<float>(scale * (double(input[base + i]) - double(running_mean[c]))) + beta[c];
      }
    }
  }
  return out;
}

LinearGrads dense_backward(const Tensor& input, const Tensor& weight, bool has_bias, const Tensor& grad_out) {
  const auto d = dense_dims(input, weight);
  if (grad_out.rank() != 2 || grad_out.dim(0) != d.batch || grad_out.dim(1) != d.out) {
    throw DimensionError("dense grad_out shape " + shape_to_string(grad_out.shape()));
  }
  LinearGrads g{Tensor(input.shape()), Tensor(weight.shape()), has_bias ? Tensor({d.out}) : Tensor()};
  const auto x = input.data();
  const auto w = weight.data();
  const auto go = grad_out.data();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t i = 0; i < d.in; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < d.out; ++o) acc += double(go[b * d.out + o]) * double(w[o * d.in + i]);
      g.input[b * d.in + i] = static_cast<float>(acc);
    }
  }
  for (std::size_t o = 0; o < d.out; ++o) {
    for (std::size_t i = 0; i < d.in; ++i) {
      double acc = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b) acc += double(go[b * d.out + o]) * double(x[b * d.in + i]);
      g.weight[o * d.in + i] = static_cast<float>(acc);
    }
    if (has_bias) {
      double acc = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b) acc += double(go[b * d.out + o]);
      g.bias[o] = static_cast<float>(acc);
    }
  }
  return g;
}

LinearGrads conv2d_backward(const Tensor& input, const Tensor& weight, bool has_bias, const Tensor& grad_out,
                            ConvGeometry g) {
  const auto d = conv_dims(input, weight, g);
  if (grad_out.shape() != Shape{d.b, d.k, d.oh, d.ow}) {
    throw DimensionError("conv2d grad_out shape " + shape_to_string(grad_out.shape()));
  }
  std::vector<double> gin(input.numel(), 0.0), gw(weight.numel(), 0.0), gb(d.k, 0.0);
  const auto x = input.data();
  const auto w = weight.data();
  const auto go = grad_out.data();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t k = 0; k < d.k; ++k) {
      for (std::size_t oy = 0; oy < d.oh; ++oy) {
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          const double gv = go[((b * d.k + k) * d.oh + oy) * d.ow + ox];
          gb[k] += gv;
          if (gv == 0.0) continue;
          for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t r = 0; r < d.r; ++r) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + r) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t s = 0; s < d.s; ++s) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + s) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                const std::size_t xi = ((b * d.c + c) * d.h + std::size_t(iy)) * d.w + std::size_t(ix);
                const std::size_t wi = ((k * d.c + c) * d.r + r) * d.s + s;
                gin[xi] += gv * double(w[wi]);
                gw[wi] += gv * double(x[xi]);
              }
            }
          }
        }
      }
    }
  }
  LinearGrads out{Tensor(input.shape()), Tensor(weight.shape()), has_bias ? Tensor({d.k}) : Tensor()};
  for (std::size_t i = 0; i < gin.size(); ++i) out.input[i] = static_cast<float>(gin[i]);
  for (std::size_t i = 0; i < gw.size(); ++i) out.weight[i] = static_cast<float>(gw[i]);
  if (has_bias) {
    for (std::size_t k = 0; k < d.k; ++k) out.bias[k] = static_cast<float>(gb[k]);
  }
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  check_same_shape(input, grad_out, "relu_backward");
  Tensor g(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) g[i] = input[i] > 0.0f ? grad_out[i] : 0.0f;
  return g;
}

Tensor leaky_relu_backward(const Tensor& input, float slope, const Tensor& grad_out) {
  check_same_shape(input, grad_out, "leaky_relu_backward");
  Tensor g(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const float x = input[i];
    g[i] = x > 0.0f ? grad_out[i] : (x < 0.0f ? slope * grad_out[i] : 0.0f);
  }
  return g;
}

Tensor tanh_backward(const Tensor& output, const Tensor& grad_out) {
  check_same_shape(output, grad_out, "tanh_backward");
  Tensor g(output.shape());
  for (std::size_t i = 0; i < output.numel(); ++i) {
    const double y = output[i];
    g[i] = static_cast<float>(double(grad_out[i]) * (1.0 - y * y));
  }
  return g;
}

Tensor pool_backward(const Tensor& input, PoolKind kind, PoolGeometry g, const Tensor& grad_out) {
  const auto d = pool_dims(input, g);
  if (grad_out.shape() != Shape{d.b, d.c, d.oh, d.ow}) {
    throw DimensionError("pool grad_out shape " + shape_to_string(grad_out.shape()));
  }
  std::vector<double> acc(input.numel(), 0.0);
  const double area = double(g.window * g.window);
  for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
    const std::size_t plane = bc * d.h * d.w;
    for (std::size_t oy = 0; oy < d.oh; ++oy) {
      for (std::size_t ox = 0; ox < d.ow; ++ox) {
        const double gv = grad_out[(bc * d.oh + oy) * d.ow + ox];
        if (kind == PoolKind::avg) {
          for (std::size_t r = 0; r < g.window; ++r)
            for (std::size_t s = 0; s < g.window; ++s)
              acc[plane + (oy * g.stride + r) * d.w + ox * g.stride + s] += gv / area;
          continue;
        }
        std::size_t best_at = plane + oy * g.stride * d.w + ox * g.stride;
        float best = input[best_at];
        for (std::size_t r = 0; r < g.window; ++r) {
          for (std::size_t s = 0; s < g.window; ++s) {
            const std::size_t at = plane + (oy * g.stride + r) * d.w + ox * g.stride + s;
            if (input[at] > best) {
              best = input[at];
              best_at = at;
            }
          }
        }
        acc[best_at] += gv;
      }
    }
  }
  Tensor out(input.shape());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
  return out;
}

BatchNormGrads batchnorm_backward(const Tensor& input, const Tensor& gamma, const Tensor& running_mean,
                                  const Tensor& running_var, float eps, const Tensor& grad_out) {
  check_same_shape(input, grad_out, "batchnorm_backward");
  const std::size_t channels = input.dim(1);
  const std::size_t inner = inner_extent(input);
  BatchNormGrads g{Tensor(input.shape()), Tensor({channels}), Tensor({channels})};
  for (std::size_t c = 0; c < channels; ++c) {
    const double inv_std = 1.0 / std::sqrt(double(running_var[c]) + double(eps));
    double dgamma = 0.0, dbeta = 0.0;
    for (std::size_t b = 0; b < input.dim(0); ++b) {
      const std::size_t base = (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double go = grad_out[base + i];
        dgamma += go * (double(input[base + i]) - double(running_mean[c])) * inv_std;
        dbeta += go;
        g.input[base + i] = static_cast<float>(go * double(gamma[c]) * inv_std);
      }
    }
    g.gamma[c] = static_cast<float>(dgamma);
    g.beta[c] = static_cast<float>(dbeta);
  }
  return g;
}

}  // namespace sponge::ops
