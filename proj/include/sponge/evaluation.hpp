#pragma once

#include <cstddef>
#include <optional>

#include "sponge/datasets.hpp"
#include "sponge/energy.hpp"
#include "sponge/model.hpp"

namespace sponge {

enum class Task { classification, reconstruction };

Task task_from_string(std::string_view text);
std::string_view to_string(Task task);

struct Evaluation {
  double performance = 0.0;  // accuracy, or mean SSIM against the reference outputs
  double mean_ratio = 0.0;   // mean per-batch energy ratio
};

// Performance and mean energy ratio of a model over a fixed dataset, sharing
// one forward pass per batch. For reconstruction the reference model's
// outputs are computed once at construction and serve as the SSIM target.
class Evaluator {
 public:
  Evaluator(Dataset data, Task task, std::size_t batch_size, CostConstants constants,
            const ModelGraph* reference = nullptr);

  Evaluation operator()(const ModelGraph& model) const;
  double performance(const ModelGraph& model) const;

  const Dataset& data() const { return data_; }
  Task task() const { return task_; }
  std::size_t batch_size() const { return batch_size_; }
  const CostConstants& constants() const { return constants_; }

 private:
  double reconstruction_score(std::size_t begin, const Tensor& outputs) const;

  Dataset data_;
  Task task_;
  std::size_t batch_size_;
  CostConstants constants_;
  std::optional<Tensor> reference_outputs_;
};

// Accuracy in [0, 1] for classification; mean SSIM of the model's outputs
// against `reference`'s outputs for reconstruction (ConfigError when missing).
double evaluate_performance(const ModelGraph& model, const Dataset& data, Task task,
                            const ModelGraph* reference = nullptr, std::size_t batch_size = 64);

// Performance drop in points (100 * (before - after)).
inline double drop_points(double before, double after) { return 100.0 * (before - after); }

}  // namespace sponge
