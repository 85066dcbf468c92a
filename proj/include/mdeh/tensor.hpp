#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mdeh {

/// Dense row-major f32 tensor. Shape is fixed at construction; values are
/// freely mutable. All reductions and kernels assume row-major layout, with
/// image tensors in NCHW order and plain images in CHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<float> data);

  static Tensor scalar(float v) { return Tensor({1}, {v}); }
  static Tensor full(std::vector<int> shape, float v);
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool is_scalar() const { return numel() == 1; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  float& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // NCHW / CHW / HW indexing helpers.
  float& at4(int n, int c, int h, int w);
  float at4(int n, int c, int h, int w) const;
  float& at3(int c, int h, int w);
  float at3(int c, int h, int w) const;
  float& at2(int h, int w);
  float at2(int h, int w) const;

  void fill(float v);
  bool all_finite() const;

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

std::int64_t numel_of(const std::vector<int>& shape);

/// Throws std::invalid_argument with a shape dump when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace mdeh
