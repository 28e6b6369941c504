#pragma once

#include <cstddef>
#include <string>

#include "fasn/layers.hpp"

namespace fasn {

/// Additive attention gate.
///
/// Computes a per-pixel coefficient map
///   alpha = sigmoid(psi(relu(W_g * decoder + W_x * skip)))
/// of shape (N,1,H,W) and returns skip scaled by alpha across all of its
/// channels. Both inputs must already share N, H and W.
template <typename T>
class AttentionGate {
 public:
  AttentionGate() = default;
  AttentionGate(std::size_t skip_channels, std::size_t decoder_channels, Random& rng);

  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& skip, const BasicTensor<T>& decoder) const;

  /// The coefficient map alpha on its own.
  BasicTensor<T> coefficients(BasicTape<T>& tape, const BasicTensor<T>& skip,
                              const BasicTensor<T>& decoder) const;

  /// Zeroes psi's weights and sets its bias to +20 so alpha saturates at 1 for every input.
  void force_open();

  std::size_t skip_channels() const { return w_x_.in_channels(); }
  std::size_t decoder_channels() const { return w_g_.in_channels(); }
  std::size_t inner_channels() const { return w_x_.out_channels(); }

  Conv2D<T>& decoder_projection() { return w_g_; }
  Conv2D<T>& skip_projection() { return w_x_; }
  Conv2D<T>& psi() { return psi_; }

  void collect_parameters(const std::string& prefix, NamedTensors<T>& out) const;

 private:
  Conv2D<T> w_g_;
  Conv2D<T> w_x_;
  Conv2D<T> psi_;
};

}  // namespace fasn
