#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sponge/model.hpp"

// Zero-skipping accelerator cost model.
//
// Worst case: a dense accelerator performs every multiply-accumulate, every
// element-wise op and every memory access. Average case: multiplications
// whose activation operand is exactly 0.0 are skipped, element-wise ops whose
// result is zero are skipped, pooling windows are skipped only when all their
// inputs are zero, and zero activations are neither read nor written.
// Parameter fetches are never skipped (one fetch per sample per parameter).
// Padding taps of a convolution are part of the dense schedule and are
// always counted as performed.
namespace sponge {

struct CostConstants {
  double mac_energy = 1.0;
  double simple_op_energy = 0.25;
  double mem_access_energy = 50.0;

  // Throws DomainError unless all constants are strictly positive.
  void validate() const;
  CostConstants scaled(double factor) const;
};

struct LayerCounts {
  std::uint64_t mults_total = 0;
  std::uint64_t mults_performed = 0;
  std::uint64_t simple_ops_total = 0;
  std::uint64_t simple_ops_performed = 0;
  std::uint64_t param_accesses = 0;
  std::uint64_t activation_accesses_total = 0;
  std::uint64_t activation_accesses_performed = 0;

  LayerCounts& operator+=(const LayerCounts& other);
  bool operator==(const LayerCounts&) const = default;
};

struct LayerEnergy {
  std::string layer;
  LayerKind kind = LayerKind::relu;
  LayerCounts counts;
  double worst_energy = 0.0;
  double avg_energy = 0.0;
};

struct EnergyReport {
  std::vector<LayerEnergy> layers;
  double worst_total = 0.0;
  double avg_total = 0.0;
  double ratio = 0.0;  // avg_total / worst_total

  // Adds another batch's counts layer by layer and recomputes energies.
  void merge(const EnergyReport& other, const CostConstants& constants);
};

// Dense counts for `batch` samples of the model's declared input shape.
// Performed fields are left at zero.
std::vector<LayerCounts> count_worst_case(const ModelGraph& model, std::size_t batch);

// Full counts (total and performed) from a recorded forward pass.
std::vector<LayerCounts> count_average_case(const ModelGraph& model, const Activations& activations);
std::vector<LayerCounts> count_average_case(const ModelGraph& model, const Tensor& batch);

double worst_energy(const LayerCounts& counts, const CostConstants& constants);
double average_energy(const LayerCounts& counts, const CostConstants& constants);

EnergyReport energy_report(const ModelGraph& model, const Activations& activations, const CostConstants& constants);

// Throws DomainError when the worst-case energy is zero (empty model).
EnergyReport energy_ratio(const ModelGraph& model, const Tensor& batch, const CostConstants& constants);

// Mean of per-batch ratios over consecutive batches of `batch_size` rows.
double mean_energy_ratio(const ModelGraph& model, const Tensor& samples, std::size_t batch_size,
                         const CostConstants& constants);

// Arithmetic mean of per-batch ratios; DomainError when empty.
double mean_ratio(std::span<const double> ratios);

// 100 * (attacked - clean) / clean; both ratios must lie in (0, 1].
double ratio_increase(double clean_ratio, double attacked_ratio);

void to_json(nlohmann::json& j, const EnergyReport& report);
void write_energy_csv(std::ostream& out, const EnergyReport& report);

}  // namespace sponge
