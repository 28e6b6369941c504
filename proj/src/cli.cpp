#include "fasn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "fasn/config.hpp"
#include "fasn/data.hpp"
#include "fasn/metrics.hpp"
#include "fasn/trainer.hpp"

namespace fasn {
namespace {

namespace fs = std::filesystem;

/// Files and directories a command creates; removed again unless commit() is called.
class OutputGuard {
 public:
  explicit OutputGuard(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_dir_ = true;
    }
  }
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    if (created_dir_) {
      fs::remove_all(dir_, ec);
      return;
    }
    for (auto it = files_.rbegin(); it != files_.rend(); ++it) fs::remove_all(*it, ec);
  }

  /// Registers `name` inside the output directory and returns its path.
  fs::path file(const fs::path& name) {
    fs::path p = dir_ / name;
    files_.push_back(p);
    return p;
  }
  const fs::path& dir() const { return dir_; }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
  bool created_dir_ = false;
  bool committed_ = false;
};

std::ofstream open_output(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

std::vector<std::string> variant_names() {
  std::vector<std::string> names;
  for (Variant v : kAllVariants) names.emplace_back(variant_name(v));
  return names;
}

std::string percent(double ratio) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * ratio;
  return s.str();
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

void write_mask_png(const fs::path& path, const Tensor& mask) {
  write_png(path, tensor_to_image(mask));
}

/// Options shared by train and compare.
struct TrainOptions {
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  std::uint64_t epochs = 50;
  std::size_t batch_size = 2;
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t base_width = 64;
  std::size_t depth = 5;
  std::string size;
  double val_fraction = 0.2;
  std::uint64_t checkpoint_every = 0;
  bool plot = false;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--data", data, "dataset root with images/ and masks/")->required();
    cmd.add_option("--out", out, "output directory")->required();
    cmd.add_option("--seed", seed, "seed for initialization, splits and shuffling");
    cmd.add_option("--epochs", epochs, "training epochs");
    cmd.add_option("--batch-size", batch_size, "mini-batch size")->check(CLI::PositiveNumber);
    cmd.add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    cmd.add_option("--beta1", beta1, "Adam first-moment decay");
    cmd.add_option("--beta2", beta2, "Adam second-moment decay");
    cmd.add_option("--eps", eps, "Adam epsilon");
    cmd.add_option("--base-width", base_width, "channels at the first level")->check(CLI::PositiveNumber);
    cmd.add_option("--depth", depth, "resolution levels including the bottom one")->check(CLI::Range(2, 8));
    cmd.add_option("--size", size, "resize every pair to WxH before training");
    cmd.add_option("--val-fraction", val_fraction, "validation share when the dataset has no manifest.tsv")
        ->check(CLI::Range(0.0, 0.99));
    cmd.add_option("--checkpoint-every", checkpoint_every, "write a checkpoint every N epochs (0: only the final one)");
    cmd.add_flag("--plot", plot, "also write loss.svg");
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.seed = seed;
    c.checkpoint_every = checkpoint_every;
    c.beta1 = beta1;
    c.beta2 = beta2;
    c.eps = eps;
    return c;
  }

  NetworkConfig network_config(Variant v) const {
    NetworkConfig n;
    n.variant = v;
    n.base_width = base_width;
    n.depth = depth;
    n.validate();
    return n;
  }
};

struct LoadedData {
  std::vector<SamplePair> train;
  std::vector<SamplePair> val;
  DatasetManifest manifest;
};

LoadedData load_dataset(const TrainOptions& o, std::size_t multiple) {
  LoadedData d;
  d.manifest = scan_dataset(o.data);
  const fs::path manifest_file = fs::path(o.data) / "manifest.tsv";
  if (fs::exists(manifest_file)) {
    std::ifstream in(manifest_file);
    apply_manifest(d.manifest, in);
  } else {
    assign_splits(d.manifest, o.val_fraction, o.seed);
  }
  std::optional<ImageSize> target;
  if (!o.size.empty()) target = parse_image_size(o.size);
  const auto train = load_split(d.manifest, Split::train, target, multiple);
  if (train.empty()) throw ContractError("the training split of " + o.data + " is empty");
  d.train = augment_all(train);
  d.val = load_split(d.manifest, Split::val, target, multiple);
  return d;
}

struct TrainOutcome {
  TrainingReport report;
  double val_miou = 0.0;
  bool has_val = false;
};

TrainOutcome train_one(const TrainOptions& o, Variant v, const LoadedData& data, OutputGuard& guard,
                       const fs::path& subdir, std::ostream& out) {
  TrainConfig tc = o.train_config();
  if (!subdir.empty()) fs::create_directories(guard.file(subdir));
  if (o.checkpoint_every > 0) {
    tc.checkpoint_dir = guard.dir() / subdir;
    for (std::uint64_t e = o.checkpoint_every; e <= o.epochs; e += o.checkpoint_every) {
      guard.file(subdir / checkpoint_name(e));
    }
  }
  Trainer trainer(o.network_config(v), tc);
  out << "# " << variant_name(v) << ": " << trainer.network().parameter_count() << " parameters, "
      << data.train.size() << " training samples (augmented), " << data.val.size() << " validation samples\n";
  TrainOutcome result;
  result.report = trainer.fit(data.train, data.val, [&](const EpochRecord& e) {
    out << variant_name(v) << "\tepoch " << e.epoch << "\tloss " << std::setprecision(6) << e.mean_loss;
    if (e.val_miou) out << "\tval_miou " << std::fixed << std::setprecision(4) << *e.val_miou << std::defaultfloat;
    out << '\n' << std::flush;
  });
  save_checkpoint(trainer.checkpoint(), guard.file(subdir / "model.ckpt"));
  {
    auto f = open_output(guard.file(subdir / "report.tsv"));
    result.report.write(f);
  }
  if (o.plot) {
    auto f = open_output(guard.file(subdir / "loss.svg"));
    write_loss_svg(f, result.report);
  }
  if (!data.val.empty()) {
    result.val_miou = evaluate(trainer.network(), data.val).mean();
    result.has_val = true;
  }
  return result;
}

/// Echoes every option of `cmd` as key=value, then a blank comment line.
void echo_config(const CLI::App& cmd, std::ostream& out) {
  out << "# fasn " << cmd.get_name() << '\n';
  for (const CLI::Option* opt : cmd.get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
    std::string value;
    if (opt->count() > 0) {
      for (std::size_t i = 0; i < opt->results().size(); ++i) value += (i ? "," : "") + opt->results()[i];
    } else {
      value = opt->get_default_str();
    }
    if (opt->get_type_size() == 0 && value.empty()) value = "false";
    out << normalize_key(opt->get_lnames().front()) << '=' << value << '\n';
  }
  out << std::flush;
}

/// Applies config-file entries as option defaults of `cmd`, so explicit flags win.
void apply_config_file(CLI::App& cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read config file " + path);
  const auto entries = parse_config(in, path);
  std::vector<std::string> allowed;
  for (const CLI::Option* opt : cmd.get_options()) {
    for (const auto& name : opt->get_lnames()) {
      if (name != "help" && name != "config") allowed.push_back(name);
    }
  }
  check_config_keys(entries, allowed, path);
  for (const auto& e : entries) {
    CLI::Option* opt = nullptr;
    for (CLI::Option* candidate : cmd.get_options()) {
      for (const auto& name : candidate->get_lnames()) {
        if (normalize_key(name) == normalize_key(e.key)) opt = candidate;
      }
    }
    try {
      opt->default_val(e.value);
    } catch (const CLI::Error& err) {
      throw FormatError(path + ":" + std::to_string(e.line) + ": bad value for '" + e.key + "': " + err.what());
    }
  }
}

std::optional<std::string> prescan_config(int argc, const char* const* argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return std::nullopt;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Crack segmentation with U-Net variants"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  const std::string arch_help = "network variant: unet, attn, adv-attn or full-attn";
  const auto valid_arch = CLI::IsMember(variant_names());

  // synth
  auto* synth = app.add_subcommand("synth", "write a seeded synthetic crack dataset");
  std::string synth_out;
  std::size_t synth_count = 30;
  std::string synth_size = "64x64";
  std::uint64_t synth_seed = 1;
  double synth_val = 0.2;
  std::size_t synth_cracks = 1;
  std::size_t synth_distractors = 3;
  synth->add_option("--out", synth_out, "dataset root to create")->required();
  synth->add_option("--count", synth_count, "number of image/mask pairs")->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "WxH, both divisible by 16");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--val-fraction", synth_val, "share of pairs assigned to validation")->check(CLI::Range(0.0, 0.99));
  synth->add_option("--cracks", synth_cracks, "cracks per image");
  synth->add_option("--distractors", synth_distractors, "blob distractors per image");

  // train
  auto* train = app.add_subcommand("train", "train one network variant");
  TrainOptions train_opts;
  std::string train_arch = "unet";
  train->add_option("--arch", train_arch, arch_help)->check(valid_arch);
  train_opts.add_to(*train);

  // predict
  auto* predict = app.add_subcommand("predict", "write probability maps and binary masks");
  std::string pred_ckpt, pred_input, pred_out, pred_arch, pred_size;
  std::size_t pred_width = 0;
  predict->add_option("--checkpoint", pred_ckpt, "trained checkpoint")->required();
  predict->add_option("--input", pred_input, "an image file or a directory of images")->required();
  predict->add_option("--out", pred_out, "output directory")->required();
  predict->add_option("--arch", pred_arch, "expected variant; must match the checkpoint")->check(valid_arch);
  predict->add_option("--base-width", pred_width, "expected base width; must match the checkpoint");
  predict->add_option("--size", pred_size, "resize inputs to WxH before prediction");

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score predicted masks against ground truth");
  std::string eval_pred, eval_gt, eval_out;
  float eval_threshold = 0.5f;
  evaluate_cmd->add_option("--pred", eval_pred, "directory of <stem>_mask.png (or <stem>.png) predictions")->required();
  evaluate_cmd->add_option("--gt", eval_gt, "directory of <stem>.png masks, or a dataset root")->required();
  evaluate_cmd->add_option("--out", eval_out, "also write the report to this file");
  evaluate_cmd->add_option("--threshold", eval_threshold, "foreground threshold on [0,1] intensities");

  // compare
  auto* compare = app.add_subcommand("compare", "train or load all four variants and tabulate mIoU");
  TrainOptions cmp_opts;
  std::vector<std::string> cmp_ckpts;
  cmp_opts.add_to(*compare);
  compare->add_option("--checkpoints", cmp_ckpts, "four checkpoints (unet attn adv-attn full-attn) to load instead of training")
      ->expected(4);

  std::string config_file;
  for (CLI::App* cmd : {synth, train, predict, evaluate_cmd, compare}) {
    cmd->add_option("--config", config_file, "key=value file; flags given on the command line override it");
  }

  try {
    // Config values become defaults before parsing so explicit flags override them.
    if (auto config_path = prescan_config(argc, argv); config_path && argc > 1) {
      CLI::App* target = nullptr;
      for (CLI::App* cmd : {synth, train, predict, evaluate_cmd, compare}) {
        if (cmd->get_name() == argv[1]) target = cmd;
      }
      if (target != nullptr) apply_config_file(*target, *config_path);
    }
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (synth->parsed()) {
      echo_config(*synth, out);
      const ImageSize size = parse_image_size(synth_size);
      OutputGuard guard(synth_out);
      fs::create_directories(guard.dir() / "images");
      fs::create_directories(guard.dir() / "masks");
      SynthParams params;
      params.crack_count = synth_cracks;
      params.distractor_count = synth_distractors;
      Random seeds(synth_seed);
      DatasetManifest manifest;
      manifest.root = guard.dir();
      const int digits = std::max<int>(4, static_cast<int>(std::to_string(synth_count).size()));
      for (std::size_t i = 0; i < synth_count; ++i) {
        std::ostringstream stem;
        stem << "crack_" << std::setw(digits) << std::setfill('0') << i + 1;
        const SamplePair pair = synth_crack(seeds.next(), size, params);
        const fs::path image = guard.file(fs::path("images") / (stem.str() + ".png"));
        const fs::path mask = guard.file(fs::path("masks") / (stem.str() + ".png"));
        write_png(image, tensor_to_image(pair.image));
        write_mask_png(mask, pair.mask);
        manifest.entries.push_back({stem.str(), image, mask, Split::train});
      }
      assign_splits(manifest, synth_val, synth_seed);
      {
        auto f = open_output(guard.file("manifest.tsv"));
        write_manifest(f, manifest);
      }
      out << "wrote " << synth_count << " pairs to " << guard.dir().string() << '\n';
      guard.commit();
      return 0;
    }

    if (train->parsed()) {
      echo_config(*train, out);
      const Variant v = *parse_variant(train_arch);
      const NetworkConfig net = train_opts.network_config(v);
      const LoadedData data = load_dataset(train_opts, net.spatial_divisor());
      OutputGuard guard(train_opts.out);
      const TrainOutcome r = train_one(train_opts, v, data, guard, {}, out);
      if (r.has_val) out << "validation mIoU\t" << percent(r.val_miou) << "%\n";
      guard.commit();
      return 0;
    }

    if (predict->parsed()) {
      echo_config(*predict, out);
      const Checkpoint c = load_checkpoint(pred_ckpt);
      if (!pred_arch.empty() && *parse_variant(pred_arch) != c.network.variant) {
        throw ContractError("checkpoint " + pred_ckpt + " holds a " + std::string(variant_name(c.network.variant)) +
                            " network, not " + pred_arch);
      }
      if (pred_width != 0 && pred_width != c.network.base_width) {
        throw ContractError("checkpoint " + pred_ckpt + " has base width " + std::to_string(c.network.base_width) +
                            ", not " + std::to_string(pred_width));
      }
      Network<float> net(c.network, 0);
      load_weights(net, c);
      std::vector<fs::path> inputs;
      if (fs::is_directory(pred_input)) {
        for (const auto& e : fs::directory_iterator(pred_input)) {
          if (e.is_regular_file() && is_image_file(e.path())) inputs.push_back(e.path());
        }
        std::sort(inputs.begin(), inputs.end());
      } else if (fs::exists(pred_input)) {
        inputs.push_back(pred_input);
      } else {
        throw FormatError("input " + pred_input + " does not exist");
      }
      std::optional<ImageSize> target;
      if (!pred_size.empty()) target = parse_image_size(pred_size);
      OutputGuard guard(pred_out);
      for (const auto& path : inputs) {
        Tensor image = image_to_tensor(read_image(path), c.network.in_channels);
        if (target) image = resize_bilinear(image, target->height, target->width);
        const Image8 prob = tensor_to_image(predict_probabilities(net, image));
        Image8 mask = prob;
        for (auto& p : mask.pixels) p = p >= 128 ? 255 : 0;
        const std::string stem = path.stem().string();
        write_png(guard.file(stem + "_prob.png"), prob);
        write_png(guard.file(stem + "_mask.png"), mask);
      }
      out << "wrote " << 2 * inputs.size() << " files to " << guard.dir().string() << '\n';
      guard.commit();
      return 0;
    }

    if (evaluate_cmd->parsed()) {
      echo_config(*evaluate_cmd, out);
      fs::path gt_dir = eval_gt;
      if (fs::is_directory(gt_dir / "masks")) gt_dir /= "masks";
      std::map<std::string, fs::path> preds, truths;
      for (const auto& e : fs::directory_iterator(eval_pred)) {
        if (!e.is_regular_file() || !is_image_file(e.path())) continue;
        std::string stem = e.path().stem().string();
        if (stem.ends_with("_prob")) continue;
        if (stem.ends_with("_mask")) stem.resize(stem.size() - 5);
        preds[stem] = e.path();
      }
      for (const auto& e : fs::directory_iterator(gt_dir)) {
        if (e.is_regular_file() && is_image_file(e.path())) truths[e.path().stem().string()] = e.path();
      }
      std::string unmatched;
      for (const auto& [stem, p] : preds) {
        if (!truths.count(stem)) unmatched += " " + stem + " (no ground truth)";
      }
      for (const auto& [stem, p] : truths) {
        if (!preds.count(stem)) unmatched += " " + stem + " (no prediction)";
      }
      if (!unmatched.empty()) throw FormatError("unmatched stems:" + unmatched);
      if (preds.empty()) throw FormatError("no predictions found in " + eval_pred);
      EvaluationReport report;
      for (const auto& [stem, p] : preds) {
        const Tensor pred = image_to_tensor(read_image(p), 1);
        const Tensor gt = binarize(image_to_tensor(read_image(truths.at(stem)), 1), 128.0f / 255.0f);
        if (pred.shape() != gt.shape()) {
          throw ShapeError("prediction " + stem + " is " + to_string(pred.shape()) + " but its mask is " +
                           to_string(gt.shape()));
        }
        report.images.emplace_back(stem, iou(pred, gt, eval_threshold));
      }
      report.write(out);
      out << "# mIoU " << percent(report.mean()) << "%\n";
      if (!eval_out.empty()) {
        std::ofstream f = open_output(eval_out);
        report.write(f);
      }
      return 0;
    }

    if (compare->parsed()) {
      echo_config(*compare, out);
      const NetworkConfig probe = cmp_opts.network_config(Variant::unet);
      const LoadedData data = load_dataset(cmp_opts, probe.spatial_divisor());
      if (data.val.empty()) throw ContractError("compare needs a non-empty validation split");
      OutputGuard guard(cmp_opts.out);
      std::vector<std::pair<Variant, double>> rows;
      for (std::size_t i = 0; i < kAllVariants.size(); ++i) {
        const Variant v = kAllVariants[i];
        if (!cmp_ckpts.empty()) {
          const Checkpoint c = load_checkpoint(cmp_ckpts[i]);
          if (c.network.variant != v) {
            throw ContractError("checkpoint " + cmp_ckpts[i] + " holds " + std::string(variant_name(c.network.variant)) +
                                ", expected " + std::string(variant_name(v)) + " in that position");
          }
          Network<float> net(c.network, 0);
          load_weights(net, c);
          rows.emplace_back(v, evaluate(net, data.val).mean());
        } else {
          rows.emplace_back(v, train_one(cmp_opts, v, data, guard, std::string(variant_name(v)), out).val_miou);
        }
      }
      std::ostringstream table;
      table << "Network\tmIoU (%)\n";
      for (const auto& [v, m] : rows) table << variant_name(v) << '\t' << percent(m) << '\n';
      out << table.str();
      {
        auto f = open_output(guard.file("comparison.tsv"));
        f << table.str();
      }
      guard.commit();
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace fasn
