#include "mdeh/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mdeh {

std::int64_t numel_of(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in tensor shape");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel_of(shape_) != static_cast<std::int64_t>(data_.size()))
    throw std::invalid_argument("tensor data length does not match shape product");
}

Tensor Tensor::full(std::vector<int> shape, float v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

float& Tensor::at4(int n, int c, int h, int w) {
  return data_[static_cast<size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}
float Tensor::at4(int n, int c, int h, int w) const {
  return data_[static_cast<size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}
float& Tensor::at3(int c, int h, int w) {
  return data_[static_cast<size_t>((static_cast<std::int64_t>(c) * shape_[1] + h) * shape_[2] + w)];
}
float Tensor::at3(int c, int h, int w) const {
  return data_[static_cast<size_t>((static_cast<std::int64_t>(c) * shape_[1] + h) * shape_[2] + w)];
}
float& Tensor::at2(int h, int w) {
  return data_[static_cast<size_t>(static_cast<std::int64_t>(h) * shape_[1] + w)];
}
float Tensor::at2(int h, int w) const {
  return data_[static_cast<size_t>(static_cast<std::int64_t>(h) * shape_[1] + w)];
}

void Tensor::fill(float v) {
  for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (float x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << ")";
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
}

}  // namespace mdeh
