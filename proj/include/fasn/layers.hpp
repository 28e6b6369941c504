#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fasn/ops.hpp"
#include "fasn/random.hpp"
#include "fasn/tensor.hpp"

namespace fasn {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<T>>>;

struct ConvGeometry {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 1;
  std::size_t pad_w = 1;

  static ConvGeometry same3x3() { return {}; }
  static ConvGeometry pointwise() { return {1, 1, 1, 1, 0, 0}; }
};

/// Zero-padded cross-correlation. weight is (out, in, kh, kw), bias is (1, out, 1, 1).
/// Output rows are (H + 2p - kh) / s + 1; inputs where that division is inexact are rejected.
template <typename T>
BasicTensor<T> conv2d(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, const ConvGeometry& geometry);

/// 2x2, stride-2 transposed convolution: the adjoint of a stride-2 2x2 conv2d, plus bias.
/// weight is (in, out, 2, 2), bias is (1, out, 1, 1).
template <typename T>
BasicTensor<T> transposed_conv2d(BasicTape<T>& tape, const BasicTensor<T>& x,
                                 const BasicTensor<T>& weight, const BasicTensor<T>& bias);

/// 2x2, stride-2 max pooling. When `argmax` is non-null it receives, per output
/// element, the flat input index that won (first in row-major window order on ties).
template <typename T>
BasicTensor<T> max_pool2d(BasicTape<T>& tape, const BasicTensor<T>& x,
                          std::vector<std::uint32_t>* argmax = nullptr);

template <typename T>
class Conv2D {
 public:
  Conv2D() = default;
  /// Kaiming-uniform weights over fan-in, zero bias.
  Conv2D(std::size_t in_channels, std::size_t out_channels, ConvGeometry geometry, Random& rng);

  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x) const;

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  const ConvGeometry& geometry() const { return geometry_; }

  BasicTensor<T>& weight() { return weight_; }
  const BasicTensor<T>& weight() const { return weight_; }
  BasicTensor<T>& bias() { return bias_; }
  const BasicTensor<T>& bias() const { return bias_; }

  void collect_parameters(const std::string& prefix, NamedTensors<T>& out) const;

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  ConvGeometry geometry_;
  BasicTensor<T> weight_;
  BasicTensor<T> bias_;
};

template <typename T>
class TransposedConv2D {
 public:
  TransposedConv2D() = default;
  TransposedConv2D(std::size_t in_channels, std::size_t out_channels, Random& rng);

  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x) const;

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  BasicTensor<T>& weight() { return weight_; }
  const BasicTensor<T>& weight() const { return weight_; }
  BasicTensor<T>& bias() { return bias_; }
  const BasicTensor<T>& bias() const { return bias_; }

  void collect_parameters(const std::string& prefix, NamedTensors<T>& out) const;

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  BasicTensor<T> weight_;
  BasicTensor<T> bias_;
};

template <typename T>
class MaxPool2D {
 public:
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x);

  /// Winning input indices of the most recent forward pass.
  const std::vector<std::uint32_t>& argmax() const { return argmax_; }

 private:
  std::vector<std::uint32_t> argmax_;
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

template <typename T>
class BatchNorm2D {
 public:
  BatchNorm2D() = default;
  explicit BatchNorm2D(std::size_t channels, BatchNormOptions options = {});

  /// Train mode normalizes with batch statistics (biased variance) and folds them into the
  /// running estimates (unbiased variance). Eval mode uses the running estimates only.
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x, Mode mode);

  std::size_t channels() const { return channels_; }
  const BatchNormOptions& options() const { return options_; }
  BasicTensor<T>& gamma() { return gamma_; }
  BasicTensor<T>& beta() { return beta_; }
  BasicTensor<T>& running_mean() { return running_mean_; }
  BasicTensor<T>& running_var() { return running_var_; }
  const BasicTensor<T>& running_mean() const { return running_mean_; }
  const BasicTensor<T>& running_var() const { return running_var_; }

  /// Number of train-mode forward passes folded into the running statistics.
  std::uint64_t updates() const { return updates_; }

  void collect_parameters(const std::string& prefix, NamedTensors<T>& out) const;
  void collect_buffers(const std::string& prefix, NamedTensors<T>& out) const;

 private:
  std::size_t channels_ = 0;
  BatchNormOptions options_;
  BasicTensor<T> gamma_;
  BasicTensor<T> beta_;
  BasicTensor<T> running_mean_;
  BasicTensor<T> running_var_;
  std::uint64_t updates_ = 0;
};

}  // namespace fasn
