#pragma once

#include <cmath>

#include "fasn/ops.hpp"

namespace fasn {

enum class Reduction { mean, sum };

template <typename T>
struct BceOptions {
  Reduction reduction = Reduction::mean;
  /// Uniform per-element weight w_n.
  T weight = T(1);
  /// Optional per-element weights (same shape as the logits); multiplies `weight`.
  BasicTensor<T> weight_map;
};

/// Binary cross-entropy on logits, per element
///   l_n = -w_n [t_n log sigmoid(x_n) + (1 - t_n) log(1 - sigmoid(x_n))]
/// evaluated as w_n (max(x,0) - x t + log(1 + exp(-|x|))) so it never overflows.
/// Returns a (1,1,1,1) tensor; the gradient w.r.t. x_n is w_n (sigmoid(x_n) - t_n)
/// (divided by the element count for mean reduction).
template <typename T>
BasicTensor<T> bce_with_logits(BasicTape<T>& tape, const BasicTensor<T>& logits, const BasicTensor<T>& targets,
                               const BceOptions<T>& options = {}) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits: logits " + to_string(logits.shape()) + " vs targets " +
                     to_string(targets.shape()));
  }
  const bool weighted = options.weight_map.defined();
  if (weighted && options.weight_map.shape() != logits.shape()) {
    throw ShapeError("bce_with_logits: weight map shape " + to_string(options.weight_map.shape()));
  }
  auto x = logits.data();
  auto t = targets.data();
  for (T v : t) {
    if (!(v >= T(0) && v <= T(1))) throw ContractError("bce_with_logits: targets must lie in [0, 1]");
  }
  // Copied into the backward closure, so it holds the weights by value.
  auto weight_at = [w = static_cast<double>(options.weight), map = options.weight_map, weighted](std::size_t i) {
    return weighted ? w * static_cast<double>(map.data()[i]) : w;
  };

  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = static_cast<double>(x[i]);
    const double ti = static_cast<double>(t[i]);
    total += weight_at(i) * (std::max(xi, 0.0) - xi * ti + std::log1p(std::exp(-std::abs(xi))));
  }
  const double scale = options.reduction == Reduction::mean ? 1.0 / static_cast<double>(x.size()) : 1.0;
  const bool tracked = tape.tracks({&logits});
  auto out = BasicTensor<T>::full(Shape{}, static_cast<T>(total * scale), tracked);
  ensure_finite<T>(out.data(), "bce_with_logits");

  if (tracked) {
    tape.record(out, [logits = logits, targets = targets, out, scale, weight_at]() mutable {
      const double g = static_cast<double>(out.grad()[0]) * scale;
      auto gx = logits.mutable_grad();
      auto xv = logits.data();
      auto tv = targets.data();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double p = stable_sigmoid(static_cast<double>(xv[i]));
        gx[i] += static_cast<T>(g * weight_at(i) * (p - static_cast<double>(tv[i])));
      }
    });
  }
  return out;
}

}  // namespace fasn
