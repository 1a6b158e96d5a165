#include "sponge/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "sponge/errors.hpp"

namespace sponge {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_to_string(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(data_[i]) != std::bit_cast<std::uint32_t>(other.data_[i])) return false;
  }
  return true;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (begin >= end || end > t.dim(0)) throw DimensionError("row slice out of range");
  const std::size_t row = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = end - begin;
  std::vector<float> data(t.values().begin() + static_cast<std::ptrdiff_t>(begin * row),
                          t.values().begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor(std::move(shape), std::move(data));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DimensionError("gather of zero rows");
  const std::size_t row = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = rows.size();
  std::vector<float> data;
  data.reserve(rows.size() * row);
  for (auto r : rows) {
    if (r >= t.dim(0)) throw DimensionError("gather row index out of range");
    auto first = t.values().begin() + static_cast<std::ptrdiff_t>(r * row);
    data.insert(data.end(), first, first + static_cast<std::ptrdiff_t>(row));
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace sponge
