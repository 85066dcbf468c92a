#include "mdeh/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace mdeh {

void Adam::step(const std::vector<std::pair<Tensor*, const Tensor*>>& params_and_grads) {
  if (m_.empty()) {
    for (const auto& [p, g] : params_and_grads) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params_and_grads.size())
    throw std::invalid_argument("adam: parameter list changed between steps");
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (size_t i = 0; i < params_and_grads.size(); ++i) {
    Tensor* p = params_and_grads[i].first;
    const Tensor* g = params_and_grads[i].second;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::int64_t j = 0; j < p->numel(); ++j) {
      const float gj = (*g)[j];
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * gj * gj;
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      (*p)[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::step(Tape& tape, const ParamBindings& bindings) {
  std::vector<std::pair<Tensor*, const Tensor*>> pg;
  pg.reserve(bindings.items.size());
  for (const auto& [param, var] : bindings.items) pg.emplace_back(param, &tape.grad(var));
  step(pg);
}

}  // namespace mdeh
