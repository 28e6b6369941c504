#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fasn/adam.hpp"
#include "fasn/network.hpp"

namespace fasn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume training or run inference.
struct Checkpoint {
  NetworkConfig network;
  NamedTensors<float> parameters;
  NamedTensors<float> buffers;
  NamedTensors<float> adam_first;
  NamedTensors<float> adam_second;
  std::uint64_t adam_steps = 0;
  AdamOptions adam;
  /// Number of completed epochs.
  std::uint64_t epoch = 0;
  std::string rng_state;
};

/// Binary layout, all integers and floats little-endian:
///   "FASN", u32 version, u32 tensor count,
///   per tensor: u32 name length, name bytes, u32 n, c, h, w, f32 values;
///   u64 adam steps, f64 learning rate, beta1, beta2, eps,
///   u64 epoch, u32-prefixed network config text, u32-prefixed RNG state.
/// Tensor names carry a "param:", "buffer:", "adam.m:" or "adam.v:" prefix.
/// The file is written to a sibling temporary and renamed into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Throws FormatError on bad magic, an unknown version, truncation or trailing bytes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of a network's parameters and buffers (deep copies).
Checkpoint snapshot(const Network<float>& net);

/// Copies parameters and buffers from `checkpoint` into `net`; every tensor of
/// the network must be present with the same shape.
void load_weights(Network<float>& net, const Checkpoint& checkpoint);

}  // namespace fasn
