#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "istr/errors.hpp"

namespace istr {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);  // throws ArgumentError on dims < 0

// Dense float32 array with row-major layout. Rank is dynamic; the conv and
// pool kernels expect [N,C,H,W], matmul expects rank 2, everything else is
// shape-agnostic.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero filled
  Tensor(Shape shape, std::vector<float> data);

  static Tensor full(Shape shape, float v);
  static Tensor ones(Shape shape);
  static Tensor scalar(float v);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const float& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Bounds-unchecked 4-D accessors used by hot loops (shapes are validated
  // once by the caller).
  float& at4(int n, int c, int h, int w) {
    return data_[static_cast<size_t>(
        ((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const float& at4(int n, int c, int h, int w) const {
    return data_[static_cast<size_t>(
        ((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  float& at3(int c, int h, int w) {
    return data_[static_cast<size_t>(
        (static_cast<int64_t>(c) * shape_[1] + h) * shape_[2] + w)];
  }
  const float& at3(int c, int h, int w) const {
    return data_[static_cast<size_t>(
        (static_cast<int64_t>(c) * shape_[1] + h) * shape_[2] + w)];
  }
  float& at2(int r, int c) {
    return data_[static_cast<size_t>(static_cast<int64_t>(r) * shape_[1] + c)];
  }
  const float& at2(int r, int c) const {
    return data_[static_cast<size_t>(static_cast<int64_t>(r) * shape_[1] + c)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  void fill(float v);
  Tensor reshaped(Shape s) const;  // numel must match

private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace istr
