#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "fasn/adam.hpp"
#include "fasn/checkpoint.hpp"
#include "fasn/data.hpp"
#include "fasn/metrics.hpp"
#include "fasn/network.hpp"
#include "fasn/random.hpp"

namespace fasn {

struct TrainConfig {
  std::uint64_t epochs = 50;
  std::size_t batch_size = 2;
  double learning_rate = 1e-5;
  std::uint64_t seed = 0;
  /// Write a checkpoint every this many epochs (0 disables periodic checkpoints).
  std::uint64_t checkpoint_every = 0;
  /// Where periodic checkpoints go; nothing is written when empty.
  std::filesystem::path checkpoint_dir;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamOptions adam() const { return {learning_rate, beta1, beta2, eps}; }
  void validate() const;
};

struct EpochRecord {
  std::uint64_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_miou;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  /// Loss of every optimizer step, in order.
  std::vector<double> step_losses;

  /// `epoch<TAB>mean_loss<TAB>val_miou` lines after a header; a missing mIoU is written as "-".
  void write(std::ostream& out) const;
};

/// Polyline SVG of mean loss per epoch.
void write_loss_svg(std::ostream& out, const TrainingReport& report);

/// Periodic checkpoint file name for a completed epoch count, e.g. "epoch_0010.ckpt".
std::string checkpoint_name(std::uint64_t epoch);

/// Owns a network, its optimizer and the shuffling generator.
class Trainer {
 public:
  Trainer(NetworkConfig network, TrainConfig config);

  /// Resumes from a checkpoint; `config` supplies the remaining schedule.
  static Trainer resume(const Checkpoint& checkpoint, TrainConfig config);

  Network<float>& network() { return net_; }
  const Network<float>& network() const { return net_; }
  const Adam<float>& optimizer() const { return adam_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t epoch() const { return epoch_; }

  /// Runs the remaining epochs up to config().epochs. Validation mIoU is
  /// reported for each epoch when `val` is non-empty. Throws NumericError naming
  /// the epoch and step when a loss is not finite.
  TrainingReport fit(std::span<const SamplePair> train, std::span<const SamplePair> val = {},
                     const std::function<void(const EpochRecord&)>& on_epoch = {});

  /// One pass over `train` in a seeded shuffled order; returns the step losses.
  std::vector<double> run_epoch(std::span<const SamplePair> train);

  Checkpoint checkpoint() const;

 private:
  TrainConfig config_;
  Network<float> net_;
  Adam<float> adam_;
  Random rng_;
  std::uint64_t epoch_ = 0;
};

/// Sigmoid probabilities (1,1,H,W) for a (1,3,H,W) image; the image is edge-padded
/// to the network's spatial divisor and the result cropped back.
Tensor predict_probabilities(Network<float>& net, const Tensor& image);

/// Per-sample IoU of eval-mode predictions over each sample's valid region.
EvaluationReport evaluate(Network<float>& net, std::span<const SamplePair> samples, float threshold = 0.5f);

}  // namespace fasn
