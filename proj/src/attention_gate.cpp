#include "fasn/attention_gate.hpp"

#include <algorithm>

namespace fasn {

template <typename T>
AttentionGate<T>::AttentionGate(std::size_t skip_channels, std::size_t decoder_channels, Random& rng) {
  const std::size_t inner = std::max<std::size_t>(1, skip_channels / 2);
  w_g_ = Conv2D<T>(decoder_channels, inner, ConvGeometry::pointwise(), rng);
  w_x_ = Conv2D<T>(skip_channels, inner, ConvGeometry::pointwise(), rng);
  psi_ = Conv2D<T>(inner, 1, ConvGeometry::pointwise(), rng);
}

template <typename T>
BasicTensor<T> AttentionGate<T>::coefficients(BasicTape<T>& tape, const BasicTensor<T>& skip,
                                              const BasicTensor<T>& decoder) const {
  const Shape ss = skip.shape();
  const Shape ds = decoder.shape();
  if (ss.n != ds.n || ss.h != ds.h || ss.w != ds.w) {
    throw ShapeError("attention gate: skip " + to_string(ss) + " and decoder " + to_string(ds) +
                     " differ in N/H/W");
  }
  auto joint = add(tape, w_g_.forward(tape, decoder), w_x_.forward(tape, skip));
  return sigmoid(tape, psi_.forward(tape, relu(tape, joint)));
}

template <typename T>
BasicTensor<T> AttentionGate<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& skip,
                                         const BasicTensor<T>& decoder) const {
  return scale_by_map(tape, skip, coefficients(tape, skip, decoder));
}

template <typename T>
void AttentionGate<T>::force_open() {
  auto w = psi_.weight().mutable_data();
  std::fill(w.begin(), w.end(), T(0));
  psi_.bias().mutable_data()[0] = T(20);
}

template <typename T>
void AttentionGate<T>::collect_parameters(const std::string& prefix, NamedTensors<T>& out) const {
  w_g_.collect_parameters(prefix + ".w_g", out);
  w_x_.collect_parameters(prefix + ".w_x", out);
  psi_.collect_parameters(prefix + ".psi", out);
}

template class AttentionGate<float>;
template class AttentionGate<double>;

}  // namespace fasn
