#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fasn/attention_gate.hpp"
#include "fasn/layers.hpp"

namespace fasn {

enum class Variant { unet, attention, advanced_attention, full_attention };

inline constexpr std::array<Variant, 4> kAllVariants = {Variant::unet, Variant::attention,
                                                        Variant::advanced_attention, Variant::full_attention};

/// Report/CLI vocabulary: "unet", "attn", "adv-attn", "full-attn".
std::string_view variant_name(Variant v);
std::optional<Variant> parse_variant(std::string_view name);

struct NetworkConfig {
  Variant variant = Variant::unet;
  /// Resolution levels including the bottom one; depth - 1 encoder/decoder pairs.
  std::size_t depth = 5;
  std::size_t base_width = 64;
  std::size_t in_channels = 3;
  std::size_t out_channels = 1;

  /// Channel width at 1-based `level`: base_width * 2^(level-1).
  std::size_t width(std::size_t level) const { return base_width << (level - 1); }

  /// Inputs must have H and W divisible by this (2^(depth-1)).
  std::size_t spatial_divisor() const { return std::size_t{1} << (depth - 1); }

  /// Channels each multi-scale source is projected to at decoder `level`: ceil(width/level).
  std::size_t source_width(std::size_t level) const { return (width(level) + level - 1) / level; }

  /// Channels of the skip bundle concatenated at decoder `level`.
  std::size_t bundle_width(std::size_t level) const;

  void validate() const;
  void check_input(const Shape& s) const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// key=value lines, one field per line.
std::string to_text(const NetworkConfig& config);
NetworkConfig network_config_from_text(std::string_view text);

/// Two (3x3 conv -> batch norm -> ReLU) stages; spatial size preserved.
template <typename T>
class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(std::size_t in_channels, std::size_t out_channels, Random& rng);

  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x, Mode mode);

  std::size_t out_channels() const { return conv2_.out_channels(); }
  std::array<const BatchNorm2D<T>*, 2> norms() const { return {&bn1_, &bn2_}; }

  void collect_parameters(const std::string& prefix, NamedTensors<T>& out) const;
  void collect_buffers(const std::string& prefix, NamedTensors<T>& out) const;

 private:
  Conv2D<T> conv1_;
  BatchNorm2D<T> bn1_;
  Conv2D<T> conv2_;
  BatchNorm2D<T> bn2_;
};

/// One of the four U-Net variants: encoder levels, a bottom level, decoder levels.
///
/// Parameters and batch-norm statistics are registered under stable dotted
/// names (e.g. "enc1.conv1.weight", "dec3.gate2.psi.bias"); the names are the
/// checkpoint keys and are shared between variants wherever the layer is the
/// same, so weights can be transplanted with copy_state_from().
template <typename T>
class Network {
 public:
  Network(NetworkConfig config, std::uint64_t seed);

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkConfig& config() const { return config_; }

  /// (N, in, H, W) -> (N, out, H, W) logits.
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x, Mode mode);

  /// The tensor concatenated with the upsampled decoder state at 1-based decoder `level`.
  /// `encoder_outputs` holds the pre-pooling outputs of encoder levels 1..depth-1.
  BasicTensor<T> skip_bundle(BasicTape<T>& tape, std::span<const BasicTensor<T>> encoder_outputs,
                             std::size_t level, const BasicTensor<T>& decoder_state) const;

  NamedTensors<T> parameters() const;
  NamedTensors<T> buffers() const;
  std::size_t parameter_count() const;

  /// Train-mode update counts of every batch-norm layer, in registration order.
  std::vector<std::uint64_t> batch_norm_updates() const;

  /// Saturates every attention gate so all coefficients equal 1.
  void force_gates_open();

  /// Copies every parameter and buffer whose name and shape also exist in `other`.
  /// Returns the number of tensors copied.
  std::size_t copy_state_from(const Network& other);

  void zero_grad();

 private:
  struct EncoderLevel {
    DoubleConv<T> block;
    MaxPool2D<T> pool;
  };
  struct DecoderLevel {
    std::vector<Conv2D<T>> projections;
    std::vector<AttentionGate<T>> gates;
    DoubleConv<T> block;
    TransposedConv2D<T> up;
    Conv2D<T> head;
  };

  NetworkConfig config_;
  std::vector<EncoderLevel> encoders_;  // levels 1..depth-1
  DoubleConv<T> bottom_;
  TransposedConv2D<T> bottom_up_;
  std::vector<DecoderLevel> decoders_;  // levels 1..depth-1
};

}  // namespace fasn
