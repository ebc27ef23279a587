#pragma once

#include <cstdint>
#include <vector>

#include "flowrl/tensor.hpp"

namespace flowrl {

// Adam with bias correction. Holds shared handles to the parameters it
// updates; moment accumulators mirror parameter shapes exactly.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= 0.0) throw std::invalid_argument("Adam: lr must be positive");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
      throw std::invalid_argument("Adam: betas must lie in (0,1)");
    for (const Tensor& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  void step() {
    ++step_count_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto data = params_[pi].mutable_data();
      auto grad = params_[pi].grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < data.size(); ++i) {
        double g = grad[i];
        if (!std::isfinite(g)) throw numerical_error("Adam: non-finite gradient, update rejected");
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        data[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

  std::int64_t step_count() const { return step_count_; }
  double lr() const { return lr_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t step_count_ = 0;
};

// target <- (1 - tau) * target + tau * online, elementwise, off the tape
inline void soft_update(std::vector<Tensor>& target, const std::vector<Tensor>& online,
                        double tau) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("soft_update: tau must lie in [0,1]");
  if (target.size() != online.size())
    throw std::invalid_argument("soft_update: parameter lists differ in length");
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].shape() != online[i].shape())
      throw std::invalid_argument("soft_update: shape mismatch at parameter " + std::to_string(i));
    auto t = target[i].mutable_data();
    auto o = online[i].data();
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = (1.0 - tau) * t[j] + tau * o[j];
  }
}

}  // namespace flowrl
