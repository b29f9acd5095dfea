#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mrefine {

// Row-major float array with the last dimension fastest.
class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(std::vector<std::size_t> dims, float fill = 0.0f);
  DenseTensor(std::vector<std::size_t> dims, std::vector<float> data);

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 and rank-3 element access without bounds checks.
  float& at(std::size_t y, std::size_t x) { return data_[y * dims_[1] + x]; }
  float at(std::size_t y, std::size_t x) const { return data_[y * dims_[1] + x]; }
  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * dims_[1] + x) * dims_[2] + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * dims_[1] + x) * dims_[2] + c];
  }

  bool all_finite() const noexcept;
  bool same_shape(const DenseTensor& other) const noexcept { return dims_ == other.dims_; }

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<float> data_;
};

std::size_t element_count(const std::vector<std::size_t>& dims);

// Human-readable "[a, b, c]" for diagnostics.
std::string shape_string(const std::vector<std::size_t>& dims);

}  // namespace mrefine
