#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sponge/model.hpp"
#include "sponge/tensor.hpp"

namespace sponge {

// matches / total. DomainError on empty input or length mismatch.
double accuracy(std::span<const int> predictions, std::span<const int> truth);

struct Image {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  double range = 1.0;  // dynamic range L; values lie in [0, L]
  std::vector<double> values;

  // Takes a [c, h, w] (or [h, w]) tensor; values are clamped into [0, range].
  static Image from_tensor(const Tensor& t, double range = 1.0);
};

struct SsimParams {
  std::size_t window = 8;  // square uniform window, clipped to the image extent
  double k1 = 0.01;
  double k2 = 0.03;
};

// Mean over all window positions (stride 1) and channels of
//   (2 mu_a mu_b + C1)(2 cov_ab + C2) / ((mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2))
// with C1 = (k1 L)^2, C2 = (k2 L)^2 and population (1/N) moments.
double ssim(const Image& a, const Image& b, const SsimParams& params = {});

// Mean SSIM between the outputs of two models over every sample, each output
// reshaped to `image_shape` and clamped to [0, range].
double mean_ssim(const ModelGraph& model_a, const ModelGraph& model_b, const Tensor& samples, const Shape& image_shape,
                 double range = 1.0, std::size_t batch_size = 64, const SsimParams& params = {});

// Mean SSIM between precomputed reference outputs and the outputs of `model`.
double mean_ssim_against(const ModelGraph& model, const Tensor& reference_outputs, const Tensor& samples,
                         const Shape& image_shape, double range = 1.0, std::size_t batch_size = 64,
                         const SsimParams& params = {});

}  // namespace sponge
