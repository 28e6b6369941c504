#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <span>
#include <vector>

#include <unistd.h>

#include "fasn/random.hpp"
#include "fasn/tensor.hpp"

namespace fasn::test {

using DTensor = BasicTensor<double>;
using DTape = BasicTape<double>;

template <typename T>
BasicTensor<T> random_tensor(Shape s, Random& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::vector<T> v(s.numel());
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return BasicTensor<T>::from_data(s, std::move(v), requires_grad);
}

/// Integer-valued entries in [lo, hi]; sums of their products are exact in float.
inline Tensor integer_tensor(Shape s, Random& rng, int lo, int hi) {
  std::vector<float> v(s.numel());
  for (auto& x : v) x = static_cast<float>(lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1))));
  return Tensor::from_data(s, std::move(v));
}

/// Fixed random weighting of an output so the scalar objective touches every element.
inline DTensor probe_weights(Shape s, std::uint64_t seed) {
  Random rng(seed);
  return random_tensor<double>(s, rng, -1.0, 1.0);
}

/// max |a-b| / max(|a|, |b|, floor)
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central-difference check of d objective / d t[i] for the listed indices.
/// `objective` must run a fresh forward pass and return a scalar; `analytic` holds
/// the tape gradient of `t`. Returns the largest relative error seen.
inline double max_fd_error(DTensor t, const std::vector<double>& analytic, const std::vector<std::size_t>& indices,
                           const std::function<double()>& objective, double step, double floor = 1e-6) {
  double worst = 0.0;
  auto data = t.mutable_data();
  for (std::size_t i : indices) {
    const double saved = data[i];
    data[i] = saved + step;
    const double up = objective();
    data[i] = saved - step;
    const double down = objective();
    data[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, relative_error(numeric, analytic[i], floor));
  }
  return worst;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Random& rng) {
  std::vector<std::size_t> v = all_indices(n);
  rng.shuffle(std::span<std::size_t>(v));
  v.resize(std::min(n, k));
  return v;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("fasn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fasn::test
