#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "fasn/layers.hpp"

namespace fasn {

struct AdamOptions {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias-corrected moment estimates. Moments start at zero; the
/// update for step t is
///   m <- b1 m + (1-b1) g,   v <- b2 v + (1-b2) g^2,
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
template <typename T>
class Adam {
 public:
  Adam(NamedTensors<T> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& [name, p] : params_) {
      first_.emplace_back(name, BasicTensor<T>::zeros(p.shape()));
      second_.emplace_back(name, BasicTensor<T>::zeros(p.shape()));
    }
  }

  void step() {
    for (const auto& [name, p] : params_) {
      if (!p.requires_grad()) throw ContractError("adam: parameter " + name + " has no gradient");
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double correction1 = 1.0 - std::pow(b1, t);
    const double correction2 = 1.0 - std::pow(b2, t);
    const double lr = options_.learning_rate;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto p = params_[k].second.mutable_data();
      auto g = params_[k].second.grad();
      auto m = first_[k].second.mutable_data();
      auto v = second_[k].second.mutable_data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
        const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double m_hat = mi / correction1;
        const double v_hat = vi / correction2;
        p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * m_hat / (std::sqrt(v_hat) + options_.eps));
      }
    }
  }

  std::uint64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }

  const NamedTensors<T>& first_moments() const { return first_; }
  const NamedTensors<T>& second_moments() const { return second_; }

  /// Restores the step counter; moments are restored through first_moments()/second_moments() handles.
  void set_steps(std::uint64_t steps) { steps_ = steps; }

 private:
  NamedTensors<T> params_;
  NamedTensors<T> first_;
  NamedTensors<T> second_;
  AdamOptions options_;
  std::uint64_t steps_ = 0;
};

}  // namespace fasn
