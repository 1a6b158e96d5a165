#include "sponge/metrics.hpp"

#include <algorithm>

#include "sponge/errors.hpp"

namespace sponge {

double accuracy(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.empty()) throw DomainError("accuracy of an empty prediction list");
  if (predictions.size() != truth.size()) throw DomainError("prediction and label counts differ");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == truth[i];
  return double(hits) / double(predictions.size());
}

Image Image::from_tensor(const Tensor& t, double range) {
  Image img;
  img.range = range;
  if (t.rank() == 3) {
    img.channels = t.dim(0);
    img.height = t.dim(1);
    img.width = t.dim(2);
  } else if (t.rank() == 2) {
    img.height = t.dim(0);
    img.width = t.dim(1);
  } else {
    throw DimensionError("image tensor must be [c, h, w] or [h, w], got " + shape_to_string(t.shape()));
  }
  img.values.reserve(t.numel());
  for (float v : t.data()) img.values.push_back(std::clamp(double(v), 0.0, range));
  return img;
}

double ssim(const Image& a, const Image& b, const SsimParams& p) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width) throw DomainError("ssim of images with different shapes");
  if (a.values.size() != a.channels * a.height * a.width || b.values.size() != a.values.size()) {
    throw DomainError("ssim image value count does not match its shape");
  }
  if (a.range != b.range || !(a.range > 0.0)) throw DomainError("ssim images need the same positive dynamic range");
  if (p.window == 0) throw DomainError("ssim window must be positive");
  for (const auto* img : {&a, &b}) {
    for (double v : img->values) {
      if (v < 0.0 || v > img->range) throw DomainError("ssim image value outside [0, L]");
    }
  }
  const std::size_t win = std::min({p.window, a.height, a.width});
  const double c1 = (p.k1 * a.range) * (p.k1 * a.range);
  const double c2 = (p.k2 * a.range) * (p.k2 * a.range);
  const double n = double(win * win);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    const double* pa = a.values.data() + c * a.height * a.width;
    const double* pb = b.values.data() + c * b.height * b.width;
    for (std::size_t y = 0; y + win <= a.height; ++y) {
      for (std::size_t x = 0; x + win <= a.width; ++x) {
        double sa = 0.0, sb = 0.0;
        for (std::size_t dy = 0; dy < win; ++dy) {
          for (std::size_t dx = 0; dx < win; ++dx) {
            sa += pa[(y + dy) * a.width + x + dx];
            sb += pb[(y + dy) * a.width + x + dx];
          }
        }
        const double ma = sa / n, mb = sb / n;
        double va = 0.0, vb = 0.0, cov = 0.0;
        for (std::size_t dy = 0; dy < win; ++dy) {
          for (std::size_t dx = 0; dx < win; ++dx) {
            const double da = pa[(y + dy) * a.width + x + dx] - ma;
            const double db = pb[(y + dy) * a.width + x + dx] - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        }
        va /= n;
        vb /= n;
        cov /= n;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return total / double(count);
}

namespace {

Tensor outputs_of(const ModelGraph& model, const Tensor& samples, std::size_t batch_size) {
  std::vector<float> data;
  Shape shape;
  for (std::size_t begin = 0; begin < samples.dim(0); begin += batch_size) {
    const std::size_t end = std::min(samples.dim(0), begin + batch_size);
    Tensor out = forward(model, slice_rows(samples, begin, end));
    if (shape.empty()) shape = out.shape();
    data.insert(data.end(), out.values().begin(), out.values().end());
  }
  shape[0] = samples.dim(0);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

double mean_ssim_against(const ModelGraph& model, const Tensor& reference, const Tensor& samples, const Shape& image_shape,
                         double range, std::size_t batch_size, const SsimParams& params) {
  if (samples.empty() || samples.dim(0) == 0) throw DomainError("mean SSIM over an empty dataset");
  if (batch_size == 0) throw DomainError("batch size must be positive");
  const Tensor outputs = outputs_of(model, samples, batch_size);
  if (outputs.numel() != reference.numel()) throw DimensionError("reference outputs do not match model outputs");
  const std::size_t per = shape_numel(image_shape);
  if (per * samples.dim(0) != outputs.numel()) {
    throw DimensionError("model output does not reshape to image shape " + shape_to_string(image_shape));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < samples.dim(0); ++i) {
    const Tensor ya = slice_rows(outputs.reshaped({samples.dim(0), per}), i, i + 1).reshaped(image_shape);
    const Tensor yb = slice_rows(reference.reshaped({samples.dim(0), per}), i, i + 1).reshaped(image_shape);
    total += ssim(Image::from_tensor(ya, range), Image::from_tensor(yb, range), params);
  }
  return total / double(samples.dim(0));
}

double mean_ssim(const ModelGraph& model_a, const ModelGraph& model_b, const Tensor& samples, const Shape& image_shape,
                 double range, std::size_t batch_size, const SsimParams& params) {
  if (samples.empty() || samples.dim(0) == 0) throw DomainError("mean SSIM over an empty dataset");
  if (batch_size == 0) throw DomainError("batch size must be positive");
  return mean_ssim_against(model_a, outputs_of(model_b, samples, batch_size), samples, image_shape, range, batch_size,
                           params);
}

}  // namespace sponge
