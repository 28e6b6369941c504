#include "fasn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace fasn {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

Shape make_shape(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  Shape s{n, c, h, w};
  if (n == 0 || c == 0 || h == 0 || w == 0) {
    throw ShapeError("shape components must be >= 1, got " + to_string(s));
  }
  constexpr std::size_t kMax = std::numeric_limits<std::size_t>::max();
  std::size_t total = n;
  for (std::size_t d : {c, h, w}) {
    if (total > kMax / d) throw ShapeError("shape " + to_string(s) + " overflows the element count");
    total *= d;
  }
  return s;
}

namespace {

enum class Broadcast { none, per_sample_channel, per_channel };

Broadcast classify(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::none;
  if (b.c == a.c && b.h == 1 && b.w == 1) {
    if (b.n == a.n) return Broadcast::per_sample_channel;
    if (b.n == 1) return Broadcast::per_channel;
  }
  throw ShapeError("cannot combine " + to_string(a) + " with " + to_string(b) +
                   "; only equal shapes or (N,C,1,1)/(1,C,1,1) broadcasts are supported");
}

}  // namespace

template <typename T>
BasicTensor<T> elementwise(BasicTape<T>& tape, BinaryOp op, const BasicTensor<T>& a,
                           const BasicTensor<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const Broadcast mode = classify(sa, sb);
  const std::size_t plane = sa.plane();
  const bool tracked = tape.tracks({&a, &b});

  auto b_offset = [mode, sa](std::size_t n, std::size_t c) -> std::size_t {
    switch (mode) {
      case Broadcast::per_sample_channel:
        return n * sa.c + c;
      case Broadcast::per_channel:
        return c;
      default:
        return 0;
    }
  };

  auto out = BasicTensor<T>::zeros(sa, tracked);
  auto y = out.mutable_data();
  auto xa = a.data();
  auto xb = b.data();
  for (std::size_t n = 0; n < sa.n; ++n) {
    for (std::size_t c = 0; c < sa.c; ++c) {
      const std::size_t base = (n * sa.c + c) * plane;
      if (mode == Broadcast::none) {
        for (std::size_t k = 0; k < plane; ++k) {
          const T u = xa[base + k];
          const T v = xb[base + k];
          y[base + k] = op == BinaryOp::add ? u + v : op == BinaryOp::sub ? u - v : u * v;
        }
      } else {
        const T v = xb[b_offset(n, c)];
        for (std::size_t k = 0; k < plane; ++k) {
          const T u = xa[base + k];
          y[base + k] = op == BinaryOp::add ? u + v : op == BinaryOp::sub ? u - v : u * v;
        }
      }
    }
  }
  ensure_finite<T>(out.data(), "elementwise");

  if (tracked) {
    tape.record(out, [=, a = a, b = b, out = out]() mutable {
      auto go = out.grad();
      const bool ga_on = a.requires_grad();
      const bool gb_on = b.requires_grad();
      auto ga = ga_on ? a.mutable_grad() : std::span<T>{};
      auto gb = gb_on ? b.mutable_grad() : std::span<T>{};
      auto va = a.data();
      auto vb = b.data();
      for (std::size_t n = 0; n < sa.n; ++n) {
        for (std::size_t c = 0; c < sa.c; ++c) {
          const std::size_t base = (n * sa.c + c) * plane;
          for (std::size_t k = 0; k < plane; ++k) {
            const std::size_t i = base + k;
            const std::size_t j = mode == Broadcast::none ? i : b_offset(n, c);
            const T g = go[i];
            switch (op) {
              case BinaryOp::add:
                if (ga_on) ga[i] += g;
                if (gb_on) gb[j] += g;
                break;
              case BinaryOp::sub:
                if (ga_on) ga[i] += g;
                if (gb_on) gb[j] -= g;
                break;
              case BinaryOp::mul:
                if (ga_on) ga[i] += g * vb[j];
                if (gb_on) gb[j] += g * va[i];
                break;
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(BasicTape<T>& tape, std::span<const BasicTensor<T>> parts) {
  if (parts.size() < 2) throw ShapeError("concat_channels needs at least two parts");
  const Shape first = parts[0].shape();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + to_string(s) + " does not match " + to_string(first) +
                       " in N/H/W");
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  const std::size_t plane = first.plane();
  const bool tracked = tape.tracks(parts);
  auto out = BasicTensor<T>::zeros(os, tracked);
  auto y = out.mutable_data();
  for (std::size_t n = 0; n < os.n; ++n) {
    std::size_t band = 0;
    for (const auto& p : parts) {
      const std::size_t len = p.shape().c * plane;
      auto src = p.data().subspan(n * len, len);
      std::copy(src.begin(), src.end(), y.begin() + static_cast<std::ptrdiff_t>((n * channels + band) * plane));
      band += p.shape().c;
    }
  }

  if (tracked) {
    std::vector<BasicTensor<T>> inputs(parts.begin(), parts.end());
    tape.record(out, [inputs, out, channels, plane]() mutable {
      auto go = out.grad();
      const std::size_t batch = out.shape().n;
      std::size_t band = 0;
      for (auto& p : inputs) {
        const std::size_t pc = p.shape().c;
        if (p.requires_grad()) {
          auto gp = p.mutable_grad();
          const std::size_t len = pc * plane;
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t src = (n * channels + band) * plane;
            for (std::size_t k = 0; k < len; ++k) gp[n * len + k] += go[src + k];
          }
        }
        band += pc;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_channels(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t begin,
                              std::size_t count) {
  const Shape s = x.shape();
  if (count == 0 || begin + count > s.c) {
    throw ShapeError("slice_channels: band [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + to_string(s));
  }
  const Shape os{s.n, count, s.h, s.w};
  const std::size_t plane = s.plane();
  const bool tracked = tape.tracks({&x});
  auto out = BasicTensor<T>::zeros(os, tracked);
  auto y = out.mutable_data();
  auto src = x.data();
  const std::size_t len = count * plane;
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::size_t from = (n * s.c + begin) * plane;
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(from), len,
                y.begin() + static_cast<std::ptrdiff_t>(n * len));
  }
  if (tracked) {
    tape.record(out, [x = x, out, s, begin, len, plane]() mutable {
      auto go = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t to = (n * s.c + begin) * plane;
        for (std::size_t k = 0; k < len; ++k) gx[to + k] += go[n * len + k];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& x) {
  const bool tracked = tape.tracks({&x});
  T total = T(0);
  for (T v : x.data()) total += v;
  auto out = BasicTensor<T>::full(Shape{}, total, tracked);
  ensure_finite<T>(out.data(), "sum");
  if (tracked) {
    tape.record(out, [x = x, out]() mutable {
      const T g = out.grad()[0];
      for (T& v : x.mutable_grad()) v += g;
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> scale_by_map(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& alpha) {
  const Shape s = x.shape();
  const Shape sa = alpha.shape();
  if (sa.n != s.n || sa.c != 1 || sa.h != s.h || sa.w != s.w) {
    throw ShapeError("scale_by_map: map " + to_string(sa) + " does not fit " + to_string(s));
  }
  const std::size_t plane = s.plane();
  const bool tracked = tape.tracks({&x, &alpha});
  auto out = BasicTensor<T>::zeros(s, tracked);
  auto y = out.mutable_data();
  auto vx = x.data();
  auto va = alpha.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) y[base + k] = vx[base + k] * va[n * plane + k];
    }
  }
  ensure_finite<T>(out.data(), "scale_by_map");
  if (tracked) {
    tape.record(out, [x = x, alpha = alpha, out, s, plane]() mutable {
      auto go = out.grad();
      auto vx = x.data();
      auto va = alpha.data();
      const bool gx_on = x.requires_grad();
      const bool ga_on = alpha.requires_grad();
      auto gx = gx_on ? x.mutable_grad() : std::span<T>{};
      auto ga = ga_on ? alpha.mutable_grad() : std::span<T>{};
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
          const std::size_t base = (n * s.c + c) * plane;
          for (std::size_t k = 0; k < plane; ++k) {
            if (gx_on) gx[base + k] += go[base + k] * va[n * plane + k];
            if (ga_on) ga[n * plane + k] += go[base + k] * vx[base + k];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> activation(BasicTape<T>& tape, Activation kind, const BasicTensor<T>& x) {
  const Shape s = x.shape();
  if (kind == Activation::softmax_channels && s.c < 2) {
    throw ShapeError("softmax over channels needs at least 2 channels, got " + to_string(s));
  }
  const bool tracked = tape.tracks({&x});
  auto out = BasicTensor<T>::zeros(s, tracked);
  auto y = out.mutable_data();
  auto v = x.data();
  const std::size_t plane = s.plane();

  switch (kind) {
    case Activation::relu:
      // NaN is passed through so the finiteness check below sees it.
      for (std::size_t i = 0; i < v.size(); ++i) y[i] = v[i] > T(0) || v[i] != v[i] ? v[i] : T(0);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < v.size(); ++i) y[i] = stable_sigmoid(v[i]);
      break;
    case Activation::softmax_channels:
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t base = n * s.c * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          T peak = v[base + k];
          for (std::size_t c = 1; c < s.c; ++c) peak = std::max(peak, v[base + c * plane + k]);
          T total = T(0);
          for (std::size_t c = 0; c < s.c; ++c) {
            const T e = std::exp(v[base + c * plane + k] - peak);
            y[base + c * plane + k] = e;
            total += e;
          }
          for (std::size_t c = 0; c < s.c; ++c) y[base + c * plane + k] /= total;
        }
      }
      break;
  }
  ensure_finite<T>(out.data(), "activation");

  if (tracked) {
    tape.record(out, [x = x, out, kind, s, plane]() mutable {
      auto go = out.grad();
      auto yv = out.data();
      auto xv = x.data();
      auto gx = x.mutable_grad();
      switch (kind) {
        case Activation::relu:
          for (std::size_t i = 0; i < gx.size(); ++i) {
            if (xv[i] > T(0)) gx[i] += go[i];
          }
          break;
        case Activation::sigmoid:
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * yv[i] * (T(1) - yv[i]);
          break;
        case Activation::softmax_channels:
          for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = n * s.c * plane;
            for (std::size_t k = 0; k < plane; ++k) {
              T dot = T(0);
              for (std::size_t c = 0; c < s.c; ++c) {
                dot += go[base + c * plane + k] * yv[base + c * plane + k];
              }
              for (std::size_t c = 0; c < s.c; ++c) {
                const std::size_t i = base + c * plane + k;
                gx[i] += yv[i] * (go[i] - dot);
              }
            }
          }
          break;
      }
    });
  }
  return out;
}

#define FASN_INSTANTIATE_OPS(T)                                                                 \
  template BasicTensor<T> elementwise(BasicTape<T>&, BinaryOp, const BasicTensor<T>&,          \
                                      const BasicTensor<T>&);                                   \
  template BasicTensor<T> concat_channels(BasicTape<T>&, std::span<const BasicTensor<T>>);     \
  template BasicTensor<T> slice_channels(BasicTape<T>&, const BasicTensor<T>&, std::size_t,    \
                                         std::size_t);                                          \
  template BasicTensor<T> sum(BasicTape<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> scale_by_map(BasicTape<T>&, const BasicTensor<T>&,                   \
                                       const BasicTensor<T>&);                                  \
  template BasicTensor<T> activation(BasicTape<T>&, Activation, const BasicTensor<T>&);

FASN_INSTANTIATE_OPS(float)
FASN_INSTANTIATE_OPS(double)

}  // namespace fasn
