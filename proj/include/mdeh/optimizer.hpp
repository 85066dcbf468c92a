#pragma once

#include <cstdint>
#include <vector>

#include "mdeh/models.hpp"
#include "mdeh/tensor.hpp"

namespace mdeh {

/// Adam over a fixed parameter list. Moments are keyed by position, so the
/// parameter order must be stable across steps.
class Adam {
 public:
  explicit Adam(float lr = 1e-4f, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Applies one update from the gradient tensors paired with the parameters.
  void step(const std::vector<std::pair<Tensor*, const Tensor*>>& params_and_grads);
  /// Convenience for tape bindings.
  void step(Tape& tape, const ParamBindings& bindings);

  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }
  std::int64_t steps_taken() const { return t_; }

 private:
  float lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace mdeh
