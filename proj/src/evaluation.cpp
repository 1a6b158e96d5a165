#include "sponge/evaluation.hpp"

#include <algorithm>

#include "sponge/errors.hpp"
#include "sponge/metrics.hpp"

namespace sponge {

Task task_from_string(std::string_view text) {
  if (text == "classification") return Task::classification;
  if (text == "reconstruction") return Task::reconstruction;
  throw ConfigError("unknown task '" + std::string(text) + "'");
}

std::string_view to_string(Task task) {
  return task == Task::classification ? "classification" : "reconstruction";
}

Evaluator::Evaluator(Dataset data, Task task, std::size_t batch_size, CostConstants constants,
                     const ModelGraph* reference)
    : data_(std::move(data)), task_(task), batch_size_(batch_size), constants_(constants) {
  if (data_.size() == 0) throw DomainError("evaluation dataset is empty");
  if (batch_size_ == 0) throw DomainError("batch size must be positive");
  constants_.validate();
  if (task_ == Task::classification) {
    data_.label_vector();
  } else {
    if (!reference) throw ConfigError("reconstruction evaluation needs a reference model");
    std::vector<float> out;
    Shape shape;
    for (std::size_t begin = 0; begin < data_.size(); begin += batch_size_) {
      const std::size_t end = std::min(data_.size(), begin + batch_size_);
      Tensor y = forward(*reference, data_.rows(begin, end));
      shape = y.shape();
      out.insert(out.end(), y.values().begin(), y.values().end());
    }
    shape[0] = data_.size();
    reference_outputs_ = Tensor(std::move(shape), std::move(out));
  }
}

double Evaluator::reconstruction_score(std::size_t begin, const Tensor& outputs) const {
  const Shape& image_shape = data_.manifest.sample_shape;
  const std::size_t per = shape_numel(image_shape);
  if (outputs.numel() != per * outputs.dim(0)) {
    throw DimensionError("reconstruction output does not match sample shape " + shape_to_string(image_shape));
  }
  const double range = data_.manifest.dynamic_range;
  double total = 0.0;
  for (std::size_t i = 0; i < outputs.dim(0); ++i) {
    std::vector<float> a(outputs.values().begin() + static_cast<std::ptrdiff_t>(i * per),
                         outputs.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    std::vector<float> b(reference_outputs_->values().begin() + static_cast<std::ptrdiff_t>((begin + i) * per),
                         reference_outputs_->values().begin() + static_cast<std::ptrdiff_t>((begin + i + 1) * per));
    total += ssim(Image::from_tensor(Tensor(image_shape, std::move(a)), range),
                  Image::from_tensor(Tensor(image_shape, std::move(b)), range));
  }
  return total;
}

Evaluation Evaluator::operator()(const ModelGraph& model) const {
  std::vector<double> ratios;
  double score = 0.0;
  for (std::size_t begin = 0; begin < data_.size(); begin += batch_size_) {
    const std::size_t end = std::min(data_.size(), begin + batch_size_);
    const Activations acts = forward_all(model, data_.rows(begin, end));
    ratios.push_back(energy_report(model, acts, constants_).ratio);
    if (task_ == Task::classification) {
      const auto pred = argmax_rows(acts.back());
      const auto truth = data_.label_rows(begin, end);
      for (std::size_t i = 0; i < pred.size(); ++i) score += pred[i] == truth[i];
    } else {
      score += reconstruction_score(begin, acts.back());
    }
  }
  return {score / double(data_.size()), mean_ratio(ratios)};
}

double Evaluator::performance(const ModelGraph& model) const {
  double score = 0.0;
  for (std::size_t begin = 0; begin < data_.size(); begin += batch_size_) {
    const std::size_t end = std::min(data_.size(), begin + batch_size_);
    const Tensor out = forward(model, data_.rows(begin, end));
    if (task_ == Task::classification) {
      const auto pred = argmax_rows(out);
      const auto truth = data_.label_rows(begin, end);
      for (std::size_t i = 0; i < pred.size(); ++i) score += pred[i] == truth[i];
    } else {
      score += reconstruction_score(begin, out);
    }
  }
  return score / double(data_.size());
}

double evaluate_performance(const ModelGraph& model, const Dataset& data, Task task, const ModelGraph* reference,
                            std::size_t batch_size) {
  return Evaluator(data, task, batch_size, CostConstants{}, reference).performance(model);
}

}  // namespace sponge
