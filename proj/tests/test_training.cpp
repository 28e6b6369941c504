#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fasn/checkpoint.hpp"
#include "fasn/data.hpp"
#include "fasn/loss.hpp"
#include "fasn/trainer.hpp"
#include "support.hpp"

using namespace fasn;
using namespace fasn::test;

namespace {

double bce_scalar(double x, double t) {
  DTape tape(false);
  return bce_with_logits(tape, DTensor::full({1, 1, 1, 1}, x), DTensor::full({1, 1, 1, 1}, t)).item();
}

NetworkConfig small(Variant v = Variant::unet, std::size_t base = 4) {
  NetworkConfig c;
  c.variant = v;
  c.base_width = base;
  return c;
}

std::vector<SamplePair> synth_set(std::size_t count, std::size_t side, std::uint64_t seed) {
  std::vector<SamplePair> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_crack(seed + i, {side, side}));
  return out;
}

std::vector<std::vector<float>> snapshot_values(const NamedTensors<float>& named) {
  std::vector<std::vector<float>> out;
  for (const auto& [name, t] : named) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("bce with logits: examples") {
  CHECK(std::abs(bce_scalar(0.0, 0.5) - std::log(2.0)) < 1e-12);
  CHECK(std::abs(bce_scalar(0.0, 0.0) - std::log(2.0)) < 1e-12);
  CHECK(std::abs(bce_scalar(0.0, 1.0) - std::log(2.0)) < 1e-12);
  CHECK(std::abs(bce_scalar(2.0, 1.0) - 0.126928) < 1e-6);
  CHECK(bce_scalar(30.0, 1.0) < 1e-12);
  CHECK(bce_scalar(30.0, 1.0) >= 0.0);
}

TEST_CASE("bce with logits agrees with sigmoid followed by cross-entropy") {
  Random rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double x = rng.uniform(-15.0, 15.0);
    const double t = i % 3 == 0 ? rng.uniform() : static_cast<double>(i % 2);
    const double p = 1.0 / (1.0 + std::exp(-x));
    const double naive = -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    CHECK(std::abs(bce_scalar(x, t) - naive) < 1e-6);
  }
  for (double x : {-100.0, 100.0}) {
    for (double t : {0.0, 0.5, 1.0}) {
      const double v = bce_scalar(x, t);
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
    }
  }
  // The naive form overflows in float at this magnitude.
  Tape tape(false);
  const Tensor loss = bce_with_logits(tape, Tensor::full({1, 1, 1, 1}, 100.0f), Tensor::full({1, 1, 1, 1}, 0.0f));
  CHECK(std::abs(loss.item() - 100.0f) < 1e-4f);
}

TEST_CASE("bce gradient is sigmoid(x) - t under sum reduction") {
  Random rng(2);
  DTensor x = random_tensor<double>({2, 1, 3, 3}, rng, -8.0, 8.0, true);
  const DTensor t = random_tensor<double>({2, 1, 3, 3}, rng, 0.0, 1.0);
  DTape tape;
  BceOptions<double> options;
  options.reduction = Reduction::sum;
  tape.backward(bce_with_logits(tape, x, t, options));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x.data()[i]));
    CHECK(std::abs(x.grad()[i] - (s - t.data()[i])) < 1e-6);
  }

  DTensor y = random_tensor<double>({1, 1, 2, 2}, rng, -3.0, 3.0, true);
  DTape mean_tape;
  mean_tape.backward(bce_with_logits(mean_tape, y, DTensor::full({1, 1, 2, 2}, 1.0)));
  for (std::size_t i = 0; i < 4; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-y.data()[i]));
    CHECK(std::abs(y.grad()[i] - (s - 1.0) / 4.0) < 1e-9);
  }
}

TEST_CASE("bce weights, reductions and contracts") {
  DTape tape(false);
  const DTensor x = DTensor::from_data({1, 1, 1, 2}, {0.0, 2.0});
  const DTensor t = DTensor::from_data({1, 1, 1, 2}, {1.0, 1.0});
  BceOptions<double> sum;
  sum.reduction = Reduction::sum;
  const double total = bce_with_logits(tape, x, t, sum).item();
  CHECK(std::abs(total - (std::log(2.0) + 0.126928)) < 1e-6);
  CHECK(std::abs(bce_with_logits(tape, x, t).item() - total / 2) < 1e-12);
  sum.weight = 3.0;
  CHECK(std::abs(bce_with_logits(tape, x, t, sum).item() - 3 * total) < 1e-9);
  sum.weight = 1.0;
  sum.weight_map = DTensor::from_data({1, 1, 1, 2}, {0.0, 1.0});
  CHECK(std::abs(bce_with_logits(tape, x, t, sum).item() - 0.126928) < 1e-6);

  CHECK_THROWS_AS(bce_with_logits(tape, x, DTensor::from_data({1, 1, 1, 2}, {1.5, 0.0})), ContractError);
  CHECK_THROWS_AS(bce_with_logits(tape, x, DTensor::from_data({1, 1, 1, 2}, {-0.1, 0.0})), ContractError);
  CHECK_THROWS_AS(bce_with_logits(tape, x, DTensor::full({1, 1, 1, 3}, 0.0)), ShapeError);
}

TEST_CASE("adam: first step from zero state") {
  DTensor p = DTensor::full({1, 1, 1, 1}, 0.0, true);
  Adam<double> adam({{"p", p}}, {0.1, 0.9, 0.999, 1e-8});
  p.mutable_grad()[0] = 1.0;
  adam.step();
  CHECK(std::abs(p.item() - (-0.1 / (1.0 + 1e-8))) < 1e-12);
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam: two steps match a scalar reference trace") {
  DTensor p = DTensor::full({1, 1, 1, 1}, 0.5, true);
  const AdamOptions o{0.01, 0.9, 0.999, 1e-8};
  Adam<double> adam({{"p", p}}, o);

  double ref = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = 1.0;
    p.zero_grad();
    p.mutable_grad()[0] = g;
    adam.step();
    m = o.beta1 * m + (1 - o.beta1) * g;
    v = o.beta2 * v + (1 - o.beta2) * g * g;
    const double m_hat = m / (1 - std::pow(o.beta1, t));
    const double v_hat = v / (1 - std::pow(o.beta2, t));
    ref -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.eps);
    CHECK(std::abs(p.item() - ref) <= 1e-7);
    CHECK(std::abs(adam.first_moments()[0].second.item() - m) <= 1e-12);
    CHECK(std::abs(adam.second_moments()[0].second.item() - v) <= 1e-12);
  }
  CHECK(adam.steps() == 2);
}

TEST_CASE("adam: zero gradient and zero learning rate leave parameters unchanged") {
  Random rng(3);
  DTensor p = random_tensor<double>({1, 2, 3, 3}, rng, -1, 1, true);
  const std::vector<double> before(p.data().begin(), p.data().end());
  Adam<double> adam({{"p", p}}, {0.1, 0.9, 0.999, 1e-8});
  adam.step();
  CHECK(std::vector<double>(p.data().begin(), p.data().end()) == before);

  Adam<double> frozen({{"p", p}}, {0.0, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 3; ++i) {
    for (auto& g : p.mutable_grad()) g = rng.uniform(-1, 1);
    frozen.step();
  }
  CHECK(std::vector<double>(p.data().begin(), p.data().end()) == before);
  CHECK(frozen.steps() == 3);
  for (double m : frozen.first_moments()[0].second.data()) CHECK(m != 0.0);
  for (double v : frozen.second_moments()[0].second.data()) CHECK(v > 0.0);
}

TEST_CASE("adam requires gradients") {
  DTensor p = DTensor::full({1, 1, 1, 1}, 0.0);
  Adam<double> adam({{"p", p}}, {});
  CHECK_THROWS_AS(adam.step(), ContractError);
}

TEST_CASE("train config defaults and validation") {
  const TrainConfig c;
  CHECK(c.epochs == 50);
  CHECK(c.batch_size == 2);
  CHECK(c.learning_rate == 1e-5);
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.999);
  CHECK(c.eps == 1e-8);
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = {};
  bad.learning_rate = -1.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  CHECK(checkpoint_name(10) == "epoch_0010.ckpt");
}

TEST_CASE("zero epochs leave the network untouched and report nothing") {
  TrainConfig c;
  c.epochs = 0;
  Trainer trainer(small(), c);
  const auto before = snapshot_values(trainer.network().parameters());
  const auto data = synth_set(2, 16, 1);
  const TrainingReport report = trainer.fit(data);
  CHECK(report.epochs.empty());
  CHECK(report.step_losses.empty());
  CHECK(snapshot_values(trainer.network().parameters()) == before);
  CHECK(trainer.optimizer().steps() == 0);
}

TEST_CASE("an epoch runs ceil(n / batch) optimizer steps") {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  c.learning_rate = 1e-3;
  Trainer trainer(small(), c);
  const auto data = synth_set(5, 32, 2);
  const auto val = synth_set(2, 16, 40);
  std::vector<EpochRecord> seen;
  const TrainingReport report = trainer.fit(data, val, [&](const EpochRecord& r) { seen.push_back(r); });
  CHECK(report.step_losses.size() == 6);
  REQUIRE(report.epochs.size() == 2);
  CHECK(seen.size() == 2);
  CHECK(report.epochs[1].epoch == 2);
  REQUIRE(report.epochs[0].val_miou.has_value());
  CHECK(*report.epochs[0].val_miou >= 0.0);
  CHECK(*report.epochs[0].val_miou <= 1.0);
  CHECK(trainer.optimizer().steps() == 6);

  std::ostringstream text;
  report.write(text);
  CHECK(text.str().rfind("epoch\tmean_loss\tval_miou\n", 0) == 0);
  std::ostringstream svg;
  write_loss_svg(svg, report);
  CHECK(svg.str().find("<polyline") != std::string::npos);
}

TEST_CASE("a single sample can be overfit") {
  TrainConfig c;
  c.epochs = 200;
  c.batch_size = 2;
  c.learning_rate = 3e-2;
  c.seed = 5;
  Trainer trainer(small(Variant::unet, 4), c);
  const auto data = synth_set(1, 32, 7);
  const TrainingReport report = trainer.fit(data);
  REQUIRE(report.epochs.size() == 200);
  CHECK(report.epochs.back().mean_loss < 0.05);

  // 10-epoch moving average never rises after epoch 20.
  std::vector<double> average;
  for (std::size_t e = 9; e < report.epochs.size(); ++e) {
    double total = 0.0;
    for (std::size_t k = e - 9; k <= e; ++k) total += report.epochs[k].mean_loss;
    average.push_back(total / 10.0);
  }
  for (std::size_t e = 20; e + 1 < report.epochs.size(); ++e) {
    CAPTURE(e);
    CHECK(average[e - 9] <= average[e - 10]);
  }
}

TEST_CASE("same seed gives bit-identical checkpoints") {
  TempDir dir("determinism");
  const auto data = synth_set(3, 32, 11);
  TrainConfig c;
  c.epochs = 2;
  c.learning_rate = 1e-3;
  c.seed = 9;
  for (Variant v : kAllVariants) {
    CAPTURE(variant_name(v));
    Trainer a(small(v), c), b(small(v), c);
    a.fit(data);
    b.fit(data);
    save_checkpoint(a.checkpoint(), dir / "a.ckpt");
    save_checkpoint(b.checkpoint(), dir / "b.ckpt");
    CHECK(file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"));
  }
  TrainConfig other = c;
  other.seed = 10;
  Trainer a(small(), c), b(small(), other);
  a.fit(data);
  b.fit(data);
  CHECK(snapshot_values(a.network().parameters()) != snapshot_values(b.network().parameters()));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  TempDir dir("roundtrip");
  TrainConfig c;
  c.epochs = 1;
  c.learning_rate = 1e-3;
  Trainer trainer(small(Variant::full_attention), c);
  trainer.fit(synth_set(2, 32, 3));
  const Checkpoint saved = trainer.checkpoint();
  save_checkpoint(saved, dir / "model.ckpt");
  CHECK_FALSE(std::filesystem::exists(dir / "model.ckpt.tmp"));
  const Checkpoint loaded = load_checkpoint(dir / "model.ckpt");

  CHECK(loaded.network == saved.network);
  CHECK(loaded.epoch == 1);
  CHECK(loaded.adam_steps == saved.adam_steps);
  CHECK(loaded.adam.learning_rate == saved.adam.learning_rate);
  CHECK(loaded.rng_state == saved.rng_state);
  auto same = [](const NamedTensors<float>& a, const NamedTensors<float>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape()) return false;
      const auto x = a[i].second.data();
      const auto y = b[i].second.data();
      if (std::memcmp(x.data(), y.data(), x.size_bytes()) != 0) return false;
    }
    return true;
  };
  CHECK(same(loaded.parameters, saved.parameters));
  CHECK(same(loaded.buffers, saved.buffers));
  CHECK(same(loaded.adam_first, saved.adam_first));
  CHECK(same(loaded.adam_second, saved.adam_second));

  Network<float> fresh(small(Variant::full_attention), 99);
  load_weights(fresh, loaded);
  CHECK(snapshot_values(fresh.parameters()) == snapshot_values(trainer.network().parameters()));
  CHECK(snapshot_values(fresh.buffers()) == snapshot_values(trainer.network().buffers()));

  Network<float> wrong(small(Variant::unet), 1);
  CHECK_THROWS_AS(load_weights(wrong, loaded), ContractError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  TempDir dir("corrupt");
  const Checkpoint c = snapshot(Network<float>(small(), 1));
  save_checkpoint(c, dir / "good.ckpt");
  const std::string bytes = file_bytes(dir / "good.ckpt");
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };

  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(load_checkpoint(write("magic.ckpt", magic)), FormatError);

  std::string version = bytes;
  version[4] = 7;
  try {
    load_checkpoint(write("version.ckpt", version));
    FAIL("expected a version error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(load_checkpoint(write("short.ckpt", bytes.substr(0, cut))), FormatError);
  }
  CHECK_THROWS_AS(load_checkpoint(write("long.ckpt", bytes + "x")), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), FormatError);
}

TEST_CASE("resumed training matches uninterrupted training") {
  TempDir dir("resume");
  const auto data = synth_set(3, 32, 21);
  TrainConfig c;
  c.epochs = 4;
  c.learning_rate = 1e-3;
  c.seed = 4;
  for (Variant v : {Variant::unet, Variant::full_attention}) {
    CAPTURE(variant_name(v));
    Trainer whole(small(v), c);
    const TrainingReport full = whole.fit(data);

    TrainConfig first = c;
    first.epochs = 2;
    Trainer half(small(v), first);
    const TrainingReport head = half.fit(data);
    save_checkpoint(half.checkpoint(), dir / "half.ckpt");

    Trainer resumed = Trainer::resume(load_checkpoint(dir / "half.ckpt"), c);
    CHECK(resumed.epoch() == 2);
    CHECK(resumed.optimizer().steps() == half.optimizer().steps());
    const TrainingReport tail = resumed.fit(data);
    REQUIRE(tail.epochs.size() == 2);
    CHECK(tail.epochs.front().epoch == 3);

    std::vector<double> trace = head.step_losses;
    trace.insert(trace.end(), tail.step_losses.begin(), tail.step_losses.end());
    REQUIRE(trace.size() == full.step_losses.size());
    for (std::size_t i = 0; i < trace.size(); ++i) CHECK(std::abs(trace[i] - full.step_losses[i]) <= 1e-6);
  }
}

TEST_CASE("a non-finite loss names the epoch and step") {
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 1;
  Trainer trainer(small(), c);
  auto data = synth_set(2, 32, 1);
  auto d = data[1].image.mutable_data();
  d[0] = std::numeric_limits<float>::infinity();
  // The infinite pixel poisons the second shuffled batch or the first; either way the message names it.
  try {
    trainer.fit(data);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("epoch 1") != std::string::npos);
    CHECK(what.find("step") != std::string::npos);
  }
}

TEST_CASE("predictions are probabilities cropped to the input size") {
  Network<float> net(small(Variant::attention), 3);
  Random rng(5);
  const Tensor image = random_tensor<float>({1, 3, 20, 36}, rng, 0, 1);
  const Tensor p = predict_probabilities(net, image);
  CHECK(p.shape() == Shape{1, 1, 20, 36});
  for (float v : p.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  const auto samples = synth_set(2, 16, 8);
  const EvaluationReport report = evaluate(net, samples);
  CHECK(report.images.size() == 2);
  CHECK(report.images[0].first == samples[0].source);
}
