#include "istr/tensor.hpp"

#include <cmath>
#include <sstream>

namespace istr {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ArgumentError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)) {
  int64_t n = shape_numel(shape_);
  if (n != static_cast<int64_t>(data.size())) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape_));
  }
  data_ = std::move(data);
}

Tensor Tensor::full(Shape shape, float v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0f); }

Tensor Tensor::scalar(float v) { return Tensor({1}, {v}); }

int Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) {
    throw DimensionError("dim index " + std::to_string(i) + " out of range for " +
                         shape_str(shape_));
  }
  return shape_[static_cast<size_t>(i)];
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(float v) {
  for (float& x : data_) x = v;
}

Tensor Tensor::reshaped(Shape s) const {
  if (shape_numel(s) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
  }
  return Tensor(std::move(s), data_);
}

}  // namespace istr
