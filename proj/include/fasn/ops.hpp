#pragma once

#include <cstddef>
#include <span>

#include "fasn/tensor.hpp"

namespace fasn {

enum class BinaryOp { add, sub, mul };

/// a (op) b. `b` either matches a's shape or broadcasts as (N,C,1,1) / (1,C,1,1).
template <typename T>
BasicTensor<T> elementwise(BasicTape<T>& tape, BinaryOp op, const BasicTensor<T>& a,
                           const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(tape, BinaryOp::add, a, b);
}
template <typename T>
BasicTensor<T> sub(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(tape, BinaryOp::sub, a, b);
}
template <typename T>
BasicTensor<T> mul(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(tape, BinaryOp::mul, a, b);
}

/// Stacks parts along the channel axis; part k occupies the band after parts 0..k-1.
template <typename T>
BasicTensor<T> concat_channels(BasicTape<T>& tape, std::span<const BasicTensor<T>> parts);

/// Channels [begin, begin + count) of x.
template <typename T>
BasicTensor<T> slice_channels(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t begin,
                              std::size_t count);

/// Sum of all elements as a (1,1,1,1) tensor.
template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& x);

/// x[n,c,i,j] * alpha[n,0,i,j]; alpha is a single-channel map shared by every channel.
template <typename T>
BasicTensor<T> scale_by_map(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& alpha);

enum class Activation { relu, sigmoid, softmax_channels };

template <typename T>
BasicTensor<T> activation(BasicTape<T>& tape, Activation kind, const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> relu(BasicTape<T>& tape, const BasicTensor<T>& x) {
  return activation(tape, Activation::relu, x);
}
template <typename T>
BasicTensor<T> sigmoid(BasicTape<T>& tape, const BasicTensor<T>& x) {
  return activation(tape, Activation::sigmoid, x);
}
template <typename T>
BasicTensor<T> softmax_channels(BasicTape<T>& tape, const BasicTensor<T>& x) {
  return activation(tape, Activation::softmax_channels, x);
}

/// Numerically stable logistic function.
template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace fasn
