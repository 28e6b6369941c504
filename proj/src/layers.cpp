#include "fasn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace fasn {

namespace {

using Index = std::ptrdiff_t;

std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                        const char* axis) {
  const std::size_t padded = in + 2 * pad;
  if (padded < kernel) {
    throw ShapeError(std::string("conv2d: padded ") + axis + " extent " + std::to_string(padded) +
                     " is smaller than the kernel");
  }
  if ((padded - kernel) % stride != 0) {
    throw ShapeError(std::string("conv2d: ") + axis + " extent " + std::to_string(in) +
                     " does not tile exactly with the kernel and stride");
  }
  return (padded - kernel) / stride + 1;
}

// Output columns j for which the input column j*stride + v - pad lies inside [0, width).
std::pair<Index, Index> valid_columns(Index width, Index out_width, Index v, Index stride, Index pad) {
  const Index lo_num = pad - v;
  Index lo = lo_num > 0 ? (lo_num + stride - 1) / stride : 0;
  const Index hi_num = width - 1 + pad - v;
  Index hi = hi_num >= 0 ? hi_num / stride + 1 : 0;
  hi = std::min(hi, out_width);
  lo = std::min(lo, hi);
  return {lo, hi};
}

template <typename T>
T kaiming_bound(std::size_t fan_in) {
  return static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
}

template <typename T>
void fill_uniform(std::span<T> values, T bound, Random& rng) {
  for (T& v : values) v = static_cast<T>(rng.uniform(-static_cast<double>(bound), static_cast<double>(bound)));
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, const ConvGeometry& g) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                     std::to_string(ws.c));
  }
  if (ws.h != g.kernel_h || ws.w != g.kernel_w) throw ShapeError("conv2d: weight/kernel mismatch");
  if (bias.shape() != Shape{1, ws.n, 1, 1}) throw ShapeError("conv2d: bias must be (1,out,1,1)");
  if (g.stride_h == 0 || g.stride_w == 0) throw ShapeError("conv2d: stride must be positive");

  const std::size_t out_c = ws.n;
  const std::size_t oh = conv_extent(xs.h, g.kernel_h, g.stride_h, g.pad_h, "row");
  const std::size_t ow = conv_extent(xs.w, g.kernel_w, g.stride_w, g.pad_w, "column");
  const Shape os{xs.n, out_c, oh, ow};
  const bool tracked = tape.tracks({&x, &weight, &bias});
  auto out = BasicTensor<T>::zeros(os, tracked);

  const Index H = static_cast<Index>(xs.h);
  const Index W = static_cast<Index>(xs.w);
  const Index OH = static_cast<Index>(oh);
  const Index OW = static_cast<Index>(ow);
  const Index KH = static_cast<Index>(g.kernel_h);
  const Index KW = static_cast<Index>(g.kernel_w);
  const Index SH = static_cast<Index>(g.stride_h);
  const Index SW = static_cast<Index>(g.stride_w);
  const Index PH = static_cast<Index>(g.pad_h);
  const Index PW = static_cast<Index>(g.pad_w);
  const std::size_t C = xs.c;

  // Visits every (n, o, c, u, v, output row) with the clipped output-column range
  // and the matching input/output row pointers' offsets.
  auto for_each_tap = [=](auto&& body) {
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t o = 0; o < out_c; ++o) {
        const std::size_t y_plane = (n * out_c + o) * oh * ow;
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t x_plane = (n * C + c) * xs.h * xs.w;
          for (Index u = 0; u < KH; ++u) {
            for (Index v = 0; v < KW; ++v) {
              const std::size_t widx = ((o * C + c) * g.kernel_h + static_cast<std::size_t>(u)) * g.kernel_w +
                                       static_cast<std::size_t>(v);
              const auto [jlo, jhi] = valid_columns(W, OW, v, SW, PW);
              if (jlo >= jhi) continue;
              for (Index i = 0; i < OH; ++i) {
                const Index ii = i * SH + u - PH;
                if (ii < 0 || ii >= H) continue;
                body(widx, y_plane + static_cast<std::size_t>(i * OW),
                     x_plane + static_cast<std::size_t>(ii * W), jlo, jhi, v - PW);
              }
            }
          }
        }
      }
    }
  };

  {
    T* __restrict y = out.mutable_data().data();
    const T* xv = x.data().data();
    const T* wv = weight.data().data();
    const T* bv = bias.data().data();
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t o = 0; o < out_c; ++o) {
        std::fill_n(y + (n * out_c + o) * oh * ow, oh * ow, bv[o]);
      }
    }
    for_each_tap([&](std::size_t widx, std::size_t yrow, std::size_t xrow, Index jlo, Index jhi, Index shift) {
      const T w = wv[widx];
      T* __restrict yr = y + yrow;
      const T* __restrict xr = xv + xrow;
      if (SW == 1) {
        for (Index j = jlo; j < jhi; ++j) yr[j] += w * xr[j + shift];
      } else {
        for (Index j = jlo; j < jhi; ++j) yr[j] += w * xr[j * SW + shift];
      }
    });
  }
  ensure_finite<T>(out.data(), "conv2d");

  if (tracked) {
    tape.record(out, [=, x = x, weight = weight, bias = bias, out = out]() mutable {
      const T* go = out.grad().data();
      const T* xv = x.data().data();
      const T* wv = weight.data().data();
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t n = 0; n < xs.n; ++n) {
          for (std::size_t o = 0; o < out_c; ++o) {
            const T* p = go + (n * out_c + o) * oh * ow;
            T acc = T(0);
#pragma omp simd reduction(+ : acc)
            for (std::size_t k = 0; k < oh * ow; ++k) acc += p[k];
            gb[o] += acc;
          }
        }
      }
      T* gw = weight.requires_grad() ? weight.mutable_grad().data() : nullptr;
      T* gx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
      if (gw == nullptr && gx == nullptr) return;
      for_each_tap([&](std::size_t widx, std::size_t yrow, std::size_t xrow, Index jlo, Index jhi, Index shift) {
        const T* __restrict gr = go + yrow;
        if (gw != nullptr) {
          const T* __restrict xr = xv + xrow;
          T acc = T(0);
          if (SW == 1) {
#pragma omp simd reduction(+ : acc)
            for (Index j = jlo; j < jhi; ++j) acc += gr[j] * xr[j + shift];
          } else {
            for (Index j = jlo; j < jhi; ++j) acc += gr[j] * xr[j * SW + shift];
          }
          gw[widx] += acc;
        }
        if (gx != nullptr) {
          const T w = wv[widx];
          T* __restrict xr = gx + xrow;
          if (SW == 1) {
            for (Index j = jlo; j < jhi; ++j) xr[j + shift] += w * gr[j];
          } else {
            for (Index j = jlo; j < jhi; ++j) xr[j * SW + shift] += w * gr[j];
          }
        }
      });
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> transposed_conv2d(BasicTape<T>& tape, const BasicTensor<T>& x,
                                 const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.n != xs.c) {
    throw ShapeError("transposed_conv2d: input has " + std::to_string(xs.c) +
                     " channels, weight expects " + std::to_string(ws.n));
  }
  if (ws.h != 2 || ws.w != 2) throw ShapeError("transposed_conv2d: weight must be (in,out,2,2)");
  if (bias.shape() != Shape{1, ws.c, 1, 1}) {
    throw ShapeError("transposed_conv2d: bias must be (1,out,1,1)");
  }
  const std::size_t C = xs.c;
  const std::size_t O = ws.c;
  const std::size_t H = xs.h;
  const std::size_t W = xs.w;
  const std::size_t OW = 2 * W;
  const Shape os{xs.n, O, 2 * H, OW};
  const bool tracked = tape.tracks({&x, &weight, &bias});
  auto out = BasicTensor<T>::zeros(os, tracked);

  {
    T* y = out.mutable_data().data();
    const T* xv = x.data().data();
    const T* wv = weight.data().data();
    const T* bv = bias.data().data();
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t o = 0; o < O; ++o) {
        T* yp = y + (n * O + o) * os.plane();
        std::fill_n(yp, os.plane(), bv[o]);
        for (std::size_t c = 0; c < C; ++c) {
          const T* xp = xv + (n * C + c) * H * W;
          const T* k = wv + (c * O + o) * 4;
          for (std::size_t i = 0; i < H; ++i) {
            T* top = yp + (2 * i) * OW;
            T* bottom = top + OW;
            const T* xr = xp + i * W;
            for (std::size_t j = 0; j < W; ++j) {
              const T val = xr[j];
              top[2 * j] += val * k[0];
              top[2 * j + 1] += val * k[1];
              bottom[2 * j] += val * k[2];
              bottom[2 * j + 1] += val * k[3];
            }
          }
        }
      }
    }
  }
  ensure_finite<T>(out.data(), "transposed_conv2d");

  if (tracked) {
    tape.record(out, [=, x = x, weight = weight, bias = bias, out = out]() mutable {
      const T* go = out.grad().data();
      const T* xv = x.data().data();
      const T* wv = weight.data().data();
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t n = 0; n < xs.n; ++n) {
          for (std::size_t o = 0; o < O; ++o) {
            const T* p = go + (n * O + o) * os.plane();
            T acc = T(0);
            for (std::size_t k = 0; k < os.plane(); ++k) acc += p[k];
            gb[o] += acc;
          }
        }
      }
      T* gw = weight.requires_grad() ? weight.mutable_grad().data() : nullptr;
      T* gx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
      for (std::size_t n = 0; n < xs.n; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
          const T* gp = go + (n * O + o) * os.plane();
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t xoff = (n * C + c) * H * W;
            const T* k = wv + (c * O + o) * 4;
            T a0 = T(0), a1 = T(0), a2 = T(0), a3 = T(0);
            for (std::size_t i = 0; i < H; ++i) {
              const T* top = gp + (2 * i) * OW;
              const T* bottom = top + OW;
              for (std::size_t j = 0; j < W; ++j) {
                const T g0 = top[2 * j];
                const T g1 = top[2 * j + 1];
                const T g2 = bottom[2 * j];
                const T g3 = bottom[2 * j + 1];
                if (gx != nullptr) gx[xoff + i * W + j] += k[0] * g0 + k[1] * g1 + k[2] * g2 + k[3] * g3;
                const T val = xv[xoff + i * W + j];
                a0 += val * g0;
                a1 += val * g1;
                a2 += val * g2;
                a3 += val * g3;
              }
            }
            if (gw != nullptr) {
              T* kg = gw + (c * O + o) * 4;
              kg[0] += a0;
              kg[1] += a1;
              kg[2] += a2;
              kg[3] += a3;
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> max_pool2d(BasicTape<T>& tape, const BasicTensor<T>& x, std::vector<std::uint32_t>* argmax) {
  const Shape xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0) {
    throw ShapeError("max_pool2d needs even spatial size, got " + to_string(xs));
  }
  const Shape os{xs.n, xs.c, xs.h / 2, xs.w / 2};
  const bool tracked = tape.tracks({&x});
  auto out = BasicTensor<T>::zeros(os, tracked);
  auto winners = std::make_shared<std::vector<std::uint32_t>>(os.numel());
  {
    T* y = out.mutable_data().data();
    const T* xv = x.data().data();
    std::size_t k = 0;
    for (std::size_t plane = 0; plane < xs.n * xs.c; ++plane) {
      const std::size_t base = plane * xs.h * xs.w;
      for (std::size_t i = 0; i < os.h; ++i) {
        for (std::size_t j = 0; j < os.w; ++j, ++k) {
          const std::size_t r0 = base + (2 * i) * xs.w + 2 * j;
          const std::size_t cand[4] = {r0, r0 + 1, r0 + xs.w, r0 + xs.w + 1};
          std::size_t best = cand[0];
          for (int q = 1; q < 4; ++q) {
            if (xv[cand[q]] > xv[best]) best = cand[q];
          }
          y[k] = xv[best];
          (*winners)[k] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  if (argmax != nullptr) *argmax = *winners;
  if (tracked) {
    tape.record(out, [x = x, out, winners]() mutable {
      auto go = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t k = 0; k < go.size(); ++k) gx[(*winners)[k]] += go[k];
    });
  }
  return out;
}

template <typename T>
Conv2D<T>::Conv2D(std::size_t in_channels, std::size_t out_channels, ConvGeometry geometry, Random& rng)
    : in_(in_channels), out_(out_channels), geometry_(geometry) {
  weight_ = BasicTensor<T>::zeros(make_shape(out_channels, in_channels, geometry.kernel_h, geometry.kernel_w), true);
  bias_ = BasicTensor<T>::zeros(make_shape(1, out_channels, 1, 1), true);
  fill_uniform<T>(weight_.mutable_data(), kaiming_bound<T>(in_channels * geometry.kernel_h * geometry.kernel_w), rng);
}

template <typename T>
BasicTensor<T> Conv2D<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x) const {
  return conv2d(tape, x, weight_, bias_, geometry_);
}

template <typename T>
void Conv2D<T>::collect_parameters(const std::string& prefix, NamedTensors<T>& out) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

template <typename T>
TransposedConv2D<T>::TransposedConv2D(std::size_t in_channels, std::size_t out_channels, Random& rng)
    : in_(in_channels), out_(out_channels) {
  weight_ = BasicTensor<T>::zeros(make_shape(in_channels, out_channels, 2, 2), true);
  bias_ = BasicTensor<T>::zeros(make_shape(1, out_channels, 1, 1), true);
  // Each output pixel receives exactly one tap per input channel.
  fill_uniform<T>(weight_.mutable_data(), kaiming_bound<T>(in_channels), rng);
}

template <typename T>
BasicTensor<T> TransposedConv2D<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x) const {
  return transposed_conv2d(tape, x, weight_, bias_);
}

template <typename T>
void TransposedConv2D<T>::collect_parameters(const std::string& prefix, NamedTensors<T>& out) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

template <typename T>
BasicTensor<T> MaxPool2D<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x) {
  return max_pool2d(tape, x, &argmax_);
}

template <typename T>
BatchNorm2D<T>::BatchNorm2D(std::size_t channels, BatchNormOptions options)
    : channels_(channels), options_(options) {
  const Shape s = make_shape(1, channels, 1, 1);
  gamma_ = BasicTensor<T>::full(s, T(1), true);
  beta_ = BasicTensor<T>::zeros(s, true);
  running_mean_ = BasicTensor<T>::zeros(s);
  running_var_ = BasicTensor<T>::full(s, T(1));
}

template <typename T>
BasicTensor<T> BatchNorm2D<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x, Mode mode) {
  const Shape xs = x.shape();
  if (xs.c != channels_) {
    throw ShapeError("batch_norm: input has " + std::to_string(xs.c) + " channels, layer has " +
                     std::to_string(channels_));
  }
  const std::size_t plane = xs.plane();
  const std::size_t count = xs.n * plane;
  if (mode == Mode::train && count < 2) {
    throw ContractError("batch_norm: train mode needs at least 2 values per channel, got " +
                        std::to_string(count) + " for input " + to_string(xs));
  }
  const bool tracked = tape.tracks({&x, &gamma_, &beta_});
  auto out = BasicTensor<T>::zeros(xs, tracked);

  auto xhat = std::make_shared<std::vector<T>>(xs.numel());
  auto inv_std = std::make_shared<std::vector<T>>(channels_);
  auto xv = x.data();
  auto gv = gamma_.data();
  auto bv = beta_.data();
  auto rm = running_mean_.mutable_data();
  auto rv = running_var_.mutable_data();
  const double eps = options_.eps;
  const double momentum = options_.momentum;

  for (std::size_t c = 0; c < channels_; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (mode == Mode::train) {
      for (std::size_t n = 0; n < xs.n; ++n) {
        const std::size_t base = (n * channels_ + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) mean += static_cast<double>(xv[base + k]);
      }
      mean /= static_cast<double>(count);
      for (std::size_t n = 0; n < xs.n; ++n) {
        const std::size_t base = (n * channels_ + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const double d = static_cast<double>(xv[base + k]) - mean;
          var += d * d;
        }
      }
      const double biased = var / static_cast<double>(count);
      const double unbiased = var / static_cast<double>(count - 1);
      rm[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(rm[c]) + momentum * mean);
      rv[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(rv[c]) + momentum * unbiased);
      var = biased;
    } else {
      mean = static_cast<double>(rm[c]);
      var = static_cast<double>(rv[c]);
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + eps));
    const T mu = static_cast<T>(mean);
    (*inv_std)[c] = istd;
    auto y = out.mutable_data();
    for (std::size_t n = 0; n < xs.n; ++n) {
      const std::size_t base = (n * channels_ + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const T h = (xv[base + k] - mu) * istd;
        (*xhat)[base + k] = h;
        y[base + k] = gv[c] * h + bv[c];
      }
    }
  }
  if (mode == Mode::train) ++updates_;
  ensure_finite<T>(out.data(), "batch_norm");

  if (tracked) {
    tape.record(out, [x = x, gamma = gamma_, beta = beta_, out, xhat, inv_std, mode, xs, plane,
                      count]() mutable {
      auto go = out.grad();
      auto gv = gamma.data();
      const std::size_t channels = xs.c;
      for (std::size_t c = 0; c < channels; ++c) {
        T sum_g = T(0);
        T sum_gh = T(0);
        for (std::size_t n = 0; n < xs.n; ++n) {
          const std::size_t base = (n * channels + c) * plane;
          for (std::size_t k = 0; k < plane; ++k) {
            sum_g += go[base + k];
            sum_gh += go[base + k] * (*xhat)[base + k];
          }
        }
        if (gamma.requires_grad()) gamma.mutable_grad()[c] += sum_gh;
        if (beta.requires_grad()) beta.mutable_grad()[c] += sum_g;
        if (!x.requires_grad()) continue;
        auto gx = x.mutable_grad();
        const T scale = gv[c] * (*inv_std)[c];
        if (mode == Mode::train) {
          const T mean_g = sum_g / static_cast<T>(count);
          const T mean_gh = sum_gh / static_cast<T>(count);
          for (std::size_t n = 0; n < xs.n; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t k = 0; k < plane; ++k) {
              gx[base + k] += scale * (go[base + k] - mean_g - (*xhat)[base + k] * mean_gh);
            }
          }
        } else {
          for (std::size_t n = 0; n < xs.n; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t k = 0; k < plane; ++k) gx[base + k] += scale * go[base + k];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
void BatchNorm2D<T>::collect_parameters(const std::string& prefix, NamedTensors<T>& out) const {
  out.emplace_back(prefix + ".gamma", gamma_);
  out.emplace_back(prefix + ".beta", beta_);
}

template <typename T>
void BatchNorm2D<T>::collect_buffers(const std::string& prefix, NamedTensors<T>& out) const {
  out.emplace_back(prefix + ".running_mean", running_mean_);
  out.emplace_back(prefix + ".running_var", running_var_);
}

#define FASN_INSTANTIATE_LAYERS(T)                                                                 \
  template BasicTensor<T> conv2d(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,      \
                                 const BasicTensor<T>&, const ConvGeometry&);                     \
  template BasicTensor<T> transposed_conv2d(BasicTape<T>&, const BasicTensor<T>&,                 \
                                            const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> max_pool2d(BasicTape<T>&, const BasicTensor<T>&,                         \
                                     std::vector<std::uint32_t>*);                                \
  template class Conv2D<T>;                                                                        \
  template class TransposedConv2D<T>;                                                              \
  template class MaxPool2D<T>;                                                                     \
  template class BatchNorm2D<T>;

FASN_INSTANTIATE_LAYERS(float)
FASN_INSTANTIATE_LAYERS(double)

}  // namespace fasn
