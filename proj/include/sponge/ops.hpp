#pragma once

#include <cstddef>

#include "sponge/tensor.hpp"

// Forward kernels for every supported layer kind plus the matching gradient
// kernels used by the tape in autodiff.hpp. All kernels are naive loops over
// row-major data; shapes are checked and violations raise DimensionError.
namespace sponge::ops {

enum class PoolKind { max, avg };

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct PoolGeometry {
  std::size_t window = 2;
  std::size_t stride = 2;
};

// Output spatial extent of a strided window sweep over `extent` (+ padding on
// both sides). Throws DimensionError when the window does not fit.
std::size_t sweep_extent(std::size_t extent, std::size_t window, std::size_t stride,
                         std::size_t padding);

// Dense layer. `input` is [batch, ...]; trailing extents are flattened so a
// dense layer may directly follow a conv/pool block. `bias` may be null.
Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor* bias);

// Cross-correlation, weight [k, c, r, s], input [b, c, h, w]. `bias` may be null.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias,
                      ConvGeometry geometry);

Tensor relu_forward(const Tensor& input);
Tensor leaky_relu_forward(const Tensor& input, float slope);
Tensor tanh_forward(const Tensor& input);

// Max or mean over windows of an [b, c, h, w] input.
Tensor pool_forward(const Tensor& input, PoolKind kind, PoolGeometry geometry);

// Inference-form batch normalization over axis 1 of [b, c, ...].
Tensor batchnorm_infer(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var, float eps);

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;  // empty when the layer has no bias
};

LinearGrads dense_backward(const Tensor& input, const Tensor& weight, bool has_bias,
                           const Tensor& grad_out);
LinearGrads conv2d_backward(const Tensor& input, const Tensor& weight, bool has_bias,
                            const Tensor& grad_out, ConvGeometry geometry);

// Subgradient at exactly 0 is 0 for both rectifiers.
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);
Tensor leaky_relu_backward(const Tensor& input, float slope, const Tensor& grad_out);
Tensor tanh_backward(const Tensor& output, const Tensor& grad_out);

// Max pooling routes the gradient to the first maximal element of each window.
Tensor pool_backward(const Tensor& input, PoolKind kind, PoolGeometry geometry,
                     const Tensor& grad_out);

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

// Running statistics are constants; only input, gamma and beta receive gradients.
BatchNormGrads batchnorm_backward(const Tensor& input, const Tensor& gamma,
                                  const Tensor& running_mean, const Tensor& running_var,
                                  float eps, const Tensor& grad_out);

}  // namespace sponge::ops
