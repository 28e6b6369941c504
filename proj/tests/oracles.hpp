#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fasn/layers.hpp"
#include "fasn/loss.hpp"
#include "fasn/network.hpp"
#include "fasn/ops.hpp"
#include "support.hpp"

namespace fasn::test {

/// Brute-force cross-correlation straight from the definition, in double.
inline std::vector<double> direct_conv(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeometry& g) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const std::size_t oh = (xs.h + 2 * g.pad_h - g.kernel_h) / g.stride_h + 1;
  const std::size_t ow = (xs.w + 2 * g.pad_w - g.kernel_w) / g.stride_w + 1;
  std::vector<double> out(xs.n * ws.n * oh * ow);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b.data()[o];
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t u = 0; u < g.kernel_h; ++u)
              for (std::size_t v = 0; v < g.kernel_w; ++v) {
                const long r = static_cast<long>(i * g.stride_h + u) - static_cast<long>(g.pad_h);
                const long q = static_cast<long>(j * g.stride_w + v) - static_cast<long>(g.pad_w);
                if (r < 0 || q < 0 || r >= static_cast<long>(xs.h) || q >= static_cast<long>(xs.w)) continue;
                acc += static_cast<double>(w.at(o, c, u, v)) * x.at(n, c, static_cast<std::size_t>(r),
                                                                      static_cast<std::size_t>(q));
              }
          out[((n * ws.n + o) * oh + i) * ow + j] = acc;
        }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Gradient check of sum(probe * f()) w.r.t. each tensor in `wrt`.
inline double layer_fd_error(const std::function<DTensor(DTape&)>& f, std::vector<DTensor> wrt, double step = 1e-3) {
  DTape tape;
  const DTensor y = f(tape);
  const DTensor p = probe_weights(y.shape(), 17);
  tape.backward(sum(tape, mul(tape, y, p)));
  auto objective = [&] {
    DTape t(false);
    return sum(t, mul(t, f(t), p)).item();
  };
  double worst = 0.0;
  for (auto& t : wrt) {
    const std::vector<double> g(t.grad().begin(), t.grad().end());
    worst = std::max(worst, max_fd_error(t, g, all_indices(t.numel()), objective, step));
  }
  return worst;
}

/// End-to-end check of the BCE loss of a double-precision network at
/// (2,3,16,16) against central differences on `samples` sampled parameters.
inline double network_fd_error(NetworkConfig config, std::size_t samples = 50, std::uint64_t seed = 11) {
  Network<double> net(config, seed);
  Random rng(seed + 1);
  const DTensor x = random_tensor<double>({2, config.in_channels, 16, 16}, rng, 0, 1);
  std::vector<double> mask(2 * 16 * 16);
  for (auto& m : mask) m = rng.uniform() < 0.3 ? 1.0 : 0.0;
  const DTensor y = DTensor::from_data({2, 1, 16, 16}, mask);

  auto loss = [&](DTape& t) { return bce_with_logits(t, net.forward(t, x, Mode::train), y); };
  DTape tape;
  tape.backward(loss(tape));
  auto objective = [&] {
    DTape t(false);
    return loss(t).item();
  };

  // Sampled uniformly over all scalar parameters.
  auto params = net.parameters();
  std::vector<std::pair<std::size_t, std::size_t>> flat;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k].second.numel(); ++i) flat.emplace_back(k, i);
  Random pick(seed + 2);
  double worst = 0.0;
  for (std::size_t idx : sample_indices(flat.size(), samples, pick)) {
    auto& t = params[flat[idx].first].second;
    const std::vector<double> g(t.grad().begin(), t.grad().end());
    worst = std::max(worst, max_fd_error(t, g, {flat[idx].second}, objective, 1e-6, 1e-6));
  }
  return worst;
}

}  // namespace fasn::test
