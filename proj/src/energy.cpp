#include "sponge/energy.hpp"

#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "sponge/errors.hpp"

namespace sponge {

void CostConstants::validate() const {
  if (!(mac_energy > 0.0) || !(simple_op_energy > 0.0) || !(mem_access_energy > 0.0)) {
    throw DomainError("cost constants must be strictly positive");
  }
}

CostConstants CostConstants::scaled(double factor) const {
  return {mac_energy * factor, simple_op_energy * factor, mem_access_energy * factor};
}

LayerCounts& LayerCounts::operator+=(const LayerCounts& o) {
  mults_total += o.mults_total;
  mults_performed += o.mults_performed;
  simple_ops_total += o.simple_ops_total;
  simple_ops_performed += o.simple_ops_performed;
  param_accesses += o.param_accesses;
  activation_accesses_total += o.activation_accesses_total;
  activation_accesses_performed += o.activation_accesses_performed;
  return *this;
}

namespace {

std::uint64_t layer_param_count(const ModelGraph& model, const LayerSpec& layer) {
  std::uint64_t n = 0;
  for (const auto& [r, tensor] : layer.params) n += model.parameter(tensor).numel();
  return n;
}

std::uint64_t nonzeros(const Tensor& t) {
  std::uint64_t n = 0;
  for (float v : t.data()) n += v != 0.0f;
  return n;
}

// Totals depend only on shapes; `batch` samples of per-sample shapes in/out.
LayerCounts dense_counts(const ModelGraph& model, const LayerSpec& layer, const Shape& in, const Shape& out,
                         std::uint64_t batch) {
  LayerCounts c;
  const std::uint64_t in_n = shape_numel(in), out_n = shape_numel(out);
  switch (layer.kind) {
    case LayerKind::dense:
      c.mults_total = batch * out_n * in_n;
      break;
    case LayerKind::conv2d: {
      const Tensor& w = *model.layer_param(layer, role::weight);
      c.mults_total = batch * w.dim(0) * w.dim(1) * w.dim(2) * w.dim(3) * out[1] * out[2];
      break;
    }
    case LayerKind::batchnorm:
      c.mults_total = batch * in_n;
      break;
    case LayerKind::relu:
    case LayerKind::leaky_relu:
    case LayerKind::tanh:
      c.simple_ops_total = batch * in_n;
      break;
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      c.simple_ops_total = batch * out_n * layer.attrs.window * layer.attrs.window;
      break;
  }
  c.param_accesses = batch * layer_param_count(model, layer);
  c.activation_accesses_total = batch * (in_n + out_n);
  return c;
}

std::uint64_t conv_taps_performed(const Tensor& x, const Tensor& w, const LayerAttrs& a, std::size_t oh, std::size_t ow) {
  const std::size_t b = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t r = w.dim(2), s = w.dim(3);
  const auto pad = static_cast<std::ptrdiff_t>(a.padding);
  std::uint64_t taps = 0;
  for (std::size_t plane = 0; plane < b * ch; ++plane) {
    const float* p = x.data().data() + plane * h * wd;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t dy = 0; dy < r; ++dy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * a.stride + dy) - pad;
          const bool row_in = iy >= 0 && iy < static_cast<std::ptrdiff_t>(h);
          for (std::size_t dx = 0; dx < s; ++dx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * a.stride + dx) - pad;
            if (!row_in || ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) {
              ++taps;  // padding tap
            } else if (p[std::size_t(iy) * wd + std::size_t(ix)] != 0.0f) {
              ++taps;
            }
          }
        }
      }
    }
  }
  return taps * w.dim(0);
}

std::uint64_t pool_windows_live(const Tensor& x, const LayerAttrs& a, std::size_t oh, std::size_t ow) {
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), wd = x.dim(3);
  std::uint64_t live = 0;
  for (std::size_t plane = 0; plane < planes; ++plane) {
    const float* p = x.data().data() + plane * h * wd;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        bool any = false;
        for (std::size_t dy = 0; dy < a.window && !any; ++dy)
          for (std::size_t dx = 0; dx < a.window && !any; ++dx)
            any = p[(oy * a.stride + dy) * wd + ox * a.stride + dx] != 0.0f;
        live += any;
      }
    }
  }
  return live;
}

}  // namespace

std::vector<LayerCounts> count_worst_case(const ModelGraph& model, std::size_t batch) {
  std::vector<LayerCounts> out;
  const auto& shapes = model.activation_shapes();
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    out.push_back(dense_counts(model, model.layers()[i], shapes[i], shapes[i + 1], batch));
  }
  return out;
}

std::vector<LayerCounts> count_average_case(const ModelGraph& model, const Activations& acts) {
  if (acts.size() != model.layers().size() + 1) throw DimensionError("activation record does not match model depth");
  const std::size_t batch = acts.front().dim(0);
  const auto& shapes = model.activation_shapes();
  std::vector<LayerCounts> out;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto& layer = model.layers()[i];
    const Tensor& x = acts[i];
    const Tensor& y = acts[i + 1];
    LayerCounts c = dense_counts(model, layer, shapes[i], shapes[i + 1], batch);
    const std::uint64_t nx = nonzeros(x), ny = nonzeros(y);
    switch (layer.kind) {
      case LayerKind::dense:
        c.mults_performed = nx * shapes[i + 1][0];
        break;
      case LayerKind::conv2d:
        c.mults_performed = conv_taps_performed(x, *model.layer_param(layer, role::weight), layer.attrs, shapes[i + 1][1],
                                                shapes[i + 1][2]);
        break;
      case LayerKind::batchnorm:
        c.mults_performed = nx;
        break;
      case LayerKind::relu:
      case LayerKind::leaky_relu:
      case LayerKind::tanh:
        c.simple_ops_performed = ny;
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        c.simple_ops_performed = pool_windows_live(x, layer.attrs, shapes[i + 1][1], shapes[i + 1][2]) *
                                 layer.attrs.window * layer.attrs.window;
        break;
    }
    c.activation_accesses_performed = nx + ny;
    out.push_back(c);
  }
  return out;
}

std::vector<LayerCounts> count_average_case(const ModelGraph& model, const Tensor& batch) {
  return count_average_case(model, forward_all(model, batch));
}

double worst_energy(const LayerCounts& c, const CostConstants& k) {
  return k.mac_energy * double(c.mults_total) + k.simple_op_energy * double(c.simple_ops_total) +
         k.mem_access_energy * double(c.param_accesses + c.activation_accesses_total);
}

double average_energy(const LayerCounts& c, const CostConstants& k) {
  return k.mac_energy * double(c.mults_performed) + k.simple_op_energy * double(c.simple_ops_performed) +
         k.mem_access_energy * double(c.param_accesses + c.activation_accesses_performed);
}

namespace {

void finish(EnergyReport& r, const CostConstants& k) {
  r.worst_total = 0.0;
  r.avg_total = 0.0;
  for (auto& l : r.layers) {
    l.worst_energy = worst_energy(l.counts, k);
    l.avg_energy = average_energy(l.counts, k);
    r.worst_total += l.worst_energy;
    r.avg_total += l.avg_energy;
  }
  if (!(r.worst_total > 0.0)) throw DomainError("worst-case energy is zero; nothing to simulate");
  r.ratio = r.avg_total / r.worst_total;
}

}  // namespace

void EnergyReport::merge(const EnergyReport& other, const CostConstants& constants) {
  if (layers.empty()) {
    *this = other;
    finish(*this, constants);
    return;
  }
  if (other.layers.size() != layers.size()) throw DimensionError("cannot merge energy reports of different models");
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].counts += other.layers[i].counts;
  finish(*this, constants);
}

EnergyReport energy_report(const ModelGraph& model, const Activations& acts, const CostConstants& constants) {
  constants.validate();
  const auto counts = count_average_case(model, acts);
  EnergyReport r;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    r.layers.push_back({model.layers()[i].name, model.layers()[i].kind, counts[i], 0.0, 0.0});
  }
  finish(r, constants);
  return r;
}

EnergyReport energy_ratio(const ModelGraph& model, const Tensor& batch, const CostConstants& constants) {
  return energy_report(model, forward_all(model, batch), constants);
}

double mean_ratio(std::span<const double> ratios) {
  if (ratios.empty()) throw DomainError("mean of zero energy ratios");
  double acc = 0.0;
  for (double r : ratios) acc += r;
  return acc / double(ratios.size());
}

double mean_energy_ratio(const ModelGraph& model, const Tensor& samples, std::size_t batch_size,
                         const CostConstants& constants) {
  if (samples.empty() || samples.dim(0) == 0) throw DomainError("mean energy ratio of an empty dataset");
  if (batch_size == 0) throw DomainError("batch size must be positive");
  std::vector<double> ratios;
  for (std::size_t begin = 0; begin < samples.dim(0); begin += batch_size) {
    const std::size_t end = std::min(samples.dim(0), begin + batch_size);
    ratios.push_back(energy_ratio(model, slice_rows(samples, begin, end), constants).ratio);
  }
  return mean_ratio(ratios);
}

double ratio_increase(double clean_ratio, double attacked_ratio) {
  if (!(clean_ratio > 0.0) || clean_ratio > 1.0) throw DomainError("clean energy ratio must lie in (0, 1]");
  if (!(attacked_ratio > 0.0) || attacked_ratio > 1.0) throw DomainError("attacked energy ratio must lie in (0, 1]");
  return 100.0 * (attacked_ratio - clean_ratio) / clean_ratio;
}

void to_json(nlohmann::json& j, const EnergyReport& report) {
  auto layers = nlohmann::json::array();
  for (const auto& l : report.layers) {
    const auto& c = l.counts;
    layers.push_back({{"layer", l.layer},
                      {"kind", std::string(to_string(l.kind))},
                      {"mults_total", c.mults_total},
                      {"mults_performed", c.mults_performed},
                      {"simple_ops_total", c.simple_ops_total},
                      {"simple_ops_performed", c.simple_ops_performed},
                      {"param_accesses", c.param_accesses},
                      {"activation_accesses_total", c.activation_accesses_total},
                      {"activation_accesses_performed", c.activation_accesses_performed},
                      {"worst_energy", l.worst_energy},
                      {"avg_energy", l.avg_energy}});
  }
  j = {{"layers", layers}, {"worst_total", report.worst_total}, {"avg_total", report.avg_total}, {"ratio", report.ratio}};
}

void write_energy_csv(std::ostream& out, const EnergyReport& report) {
  out << "layer,kind,mults_total,mults_performed,simple_ops_total,simple_ops_performed,param_accesses,"
         "activation_accesses_total,activation_accesses_performed,worst_energy,avg_energy\n";
  const auto old_precision = out.precision(17);
  for (const auto& l : report.layers) {
    const auto& c = l.counts;
    out << l.layer << ',' << to_string(l.kind) << ',' << c.mults_total << ',' << c.mults_performed << ','
        << c.simple_ops_total << ',' << c.simple_ops_performed << ',' << c.param_accesses << ','
        << c.activation_accesses_total << ',' << c.activation_accesses_performed << ',' << l.worst_energy << ','
        << l.avg_energy << '\n';
  }
  out.precision(old_precision);
}

}  // namespace sponge
