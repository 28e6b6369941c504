#include "fasn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>

#include "fasn/loss.hpp"
#include "fasn/ops.hpp"

namespace fasn {

namespace {
// Decorrelates the shuffling stream from the weight-initialization stream.
constexpr std::uint64_t kShuffleSalt = 0x9E3779B97F4A7C15ull;
}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractError("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ContractError("adam eps must be positive");
}

void TrainingReport::write(std::ostream& out) const {
  out << "epoch\tmean_loss\tval_miou\n";
  for (const auto& e : epochs) {
    out << e.epoch << '\t' << std::setprecision(9) << e.mean_loss << '\t';
    if (e.val_miou) {
      out << std::fixed << std::setprecision(6) << *e.val_miou << std::defaultfloat;
    } else {
      out << '-';
    }
    out << '\n';
  }
}

void write_loss_svg(std::ostream& out, const TrainingReport& report) {
  constexpr double kWidth = 640, kHeight = 400, kMargin = 50;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& e : report.epochs) {
    lo = std::min(lo, e.mean_loss);
    hi = std::max(hi, e.mean_loss);
  }
  if (report.epochs.empty()) lo = 0, hi = 1;
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double n = std::max<double>(1.0, static_cast<double>(report.epochs.size()) - 1.0);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin << "\" y2=\""
      << kHeight - kMargin << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\"" << kHeight - kMargin
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">epoch</text>\n"
      << "<text x=\"12\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 12 " << kHeight / 2
      << ")\" text-anchor=\"middle\">mean loss</text>\n"
      << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
      << std::setprecision(4) << hi << "</text>\n"
      << "<text x=\"" << kMargin - 4 << "\" y=\"" << kHeight - kMargin << "\" text-anchor=\"end\" font-size=\"10\">"
      << lo << "</text>\n"
      << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < report.epochs.size(); ++i) {
    const double x = kMargin + (kWidth - 2 * kMargin) * static_cast<double>(i) / n;
    const double y = kHeight - kMargin - (kHeight - 2 * kMargin) * (report.epochs[i].mean_loss - lo) / (hi - lo);
    out << std::setprecision(6) << x << ',' << y << ' ';
  }
  out << "\"/>\n</svg>\n";
}

std::string checkpoint_name(std::uint64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04llu.ckpt", static_cast<unsigned long long>(epoch));
  return buf;
}

Trainer::Trainer(NetworkConfig network, TrainConfig config)
    : config_((config.validate(), std::move(config))),
      net_(network, config_.seed),
      adam_(net_.parameters(), config_.adam()),
      rng_(config_.seed ^ kShuffleSalt) {}

Trainer Trainer::resume(const Checkpoint& c, TrainConfig config) {
  Trainer t(c.network, std::move(config));
  load_weights(t.net_, c);
  auto restore_moments = [](const NamedTensors<float>& source, const NamedTensors<float>& targets, const char* kind) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, tensor] : source) by_name[name] = &tensor;
    for (auto [name, target] : targets) {
      auto it = by_name.find(name);
      if (it == by_name.end() || it->second->shape() != target.shape()) {
        throw FormatError(std::string("checkpoint lacks a matching ") + kind + " moment for " + name);
      }
      std::copy(it->second->data().begin(), it->second->data().end(), target.mutable_data().begin());
    }
  };
  restore_moments(c.adam_first, t.adam_.first_moments(), "first");
  restore_moments(c.adam_second, t.adam_.second_moments(), "second");
  t.adam_.set_steps(c.adam_steps);
  t.epoch_ = c.epoch;
  t.rng_.restore(c.rng_state);
  return t;
}

std::vector<double> Trainer::run_epoch(std::span<const SamplePair> train) {
  if (train.empty()) throw ContractError("training set is empty");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng_.shuffle(std::span<std::size_t>(order));

  std::vector<double> losses;
  Tape tape;
  std::vector<SamplePair> batch;
  for (std::size_t begin = 0, step = 1; begin < order.size(); begin += config_.batch_size, ++step) {
    batch.clear();
    for (std::size_t i = begin; i < std::min(order.size(), begin + config_.batch_size); ++i) {
      batch.push_back(train[order[i]]);
    }
    const Tensor x = stack_images(batch);
    const Tensor y = stack_masks(batch);
    tape.reset();
    net_.zero_grad();
    try {
      const Tensor logits = net_.forward(tape, x, Mode::train);
      const Tensor loss = bce_with_logits(tape, logits, y);
      tape.backward(loss);
      losses.push_back(static_cast<double>(loss.item()));
    } catch (const NumericError& e) {
      throw NumericError("non-finite value at epoch " + std::to_string(epoch_ + 1) + ", step " +
                         std::to_string(step) + ": " + e.what());
    }
    adam_.step();
  }
  ++epoch_;
  return losses;
}

TrainingReport Trainer::fit(std::span<const SamplePair> train, std::span<const SamplePair> val,
                            const std::function<void(const EpochRecord&)>& on_epoch) {
  TrainingReport report;
  while (epoch_ < config_.epochs) {
    const std::vector<double> losses = run_epoch(train);
    EpochRecord record;
    record.epoch = epoch_;
    record.mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    if (!val.empty()) record.val_miou = evaluate(net_, val).mean();
    report.step_losses.insert(report.step_losses.end(), losses.begin(), losses.end());
    report.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
    if (config_.checkpoint_every > 0 && !config_.checkpoint_dir.empty() && epoch_ % config_.checkpoint_every == 0) {
      save_checkpoint(checkpoint(), config_.checkpoint_dir / checkpoint_name(epoch_));
    }
  }
  return report;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c = snapshot(net_);
  for (const auto& [name, t] : adam_.first_moments()) c.adam_first.emplace_back(name, t.clone());
  for (const auto& [name, t] : adam_.second_moments()) c.adam_second.emplace_back(name, t.clone());
  c.adam_steps = adam_.steps();
  c.adam = adam_.options();
  c.epoch = epoch_;
  c.rng_state = rng_.state();
  return c;
}

Tensor predict_probabilities(Network<float>& net, const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1) throw ShapeError("predict_probabilities takes one image, got " + to_string(s));
  const Tensor padded = pad_to_multiple(image, net.config().spatial_divisor());
  Tape tape(false);
  const Tensor logits = net.forward(tape, padded, Mode::eval);
  return crop(sigmoid(tape, logits), s.h, s.w);
}

EvaluationReport evaluate(Network<float>& net, std::span<const SamplePair> samples, float threshold) {
  EvaluationReport report;
  for (const auto& s : samples) {
    const Tensor probs = predict_probabilities(net, s.image);
    const std::size_t h = s.valid_height == 0 ? s.image.shape().h : s.valid_height;
    const std::size_t w = s.valid_width == 0 ? s.image.shape().w : s.valid_width;
    report.images.emplace_back(s.source, iou(crop(probs, h, w), crop(s.mask, h, w), threshold));
  }
  return report;
}

}  // namespace fasn
