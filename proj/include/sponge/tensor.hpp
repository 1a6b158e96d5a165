#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sponge {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major float32 array. Extents are always positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float value) { return Tensor({1}, std::vector<float>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  // Same data, new extents. Element count must match.
  Tensor reshaped(Shape shape) const;

  // True when every element is finite.
  bool all_finite() const;

  // Bit-level equality of shape and data (distinguishes -0.0 from 0.0).
  bool bit_equal(const Tensor& other) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);

// Rows picked by index along axis 0, in the given order.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows);

}  // namespace sponge
