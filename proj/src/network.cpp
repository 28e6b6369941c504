#include "fasn/network.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fasn {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::unet:
      return "unet";
    case Variant::attention:
      return "attn";
    case Variant::advanced_attention:
      return "adv-attn";
    case Variant::full_attention:
      return "full-attn";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  return std::nullopt;
}

std::size_t NetworkConfig::bundle_width(std::size_t level) const {
  switch (variant) {
    case Variant::unet:
    case Variant::attention:
      return width(level);
    case Variant::advanced_attention:
    case Variant::full_attention:
      return level * source_width(level);
  }
  return width(level);
}

void NetworkConfig::validate() const {
  if (depth < 2 || depth > 8) throw ContractError("network depth must be in [2, 8], got " + std::to_string(depth));
  if (base_width == 0) throw ContractError("base_width must be positive");
  if (in_channels == 0) throw ContractError("in_channels must be positive");
  if (out_channels == 0) throw ContractError("out_channels must be positive");
}

void NetworkConfig::check_input(const Shape& s) const {
  if (s.c != in_channels) {
    throw ShapeError("network expects " + std::to_string(in_channels) + " input channels, got " + to_string(s));
  }
  const std::size_t d = spatial_divisor();
  if (s.h % d != 0 || s.w % d != 0) {
    throw ShapeError("input height and width must be divisible by " + std::to_string(d) + ", got " +
                     to_string(s));
  }
}

std::string to_text(const NetworkConfig& config) {
  std::ostringstream out;
  out << "variant=" << variant_name(config.variant) << '\n'
      << "depth=" << config.depth << '\n'
      << "base_width=" << config.base_width << '\n'
      << "in_channels=" << config.in_channels << '\n'
      << "out_channels=" << config.out_channels << '\n';
  return out.str();
}

NetworkConfig network_config_from_text(std::string_view text) {
  std::map<std::string, std::string, std::less<>> fields;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("network config line without '=': " + line);
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto number = [&](const char* key) -> std::size_t {
    auto it = fields.find(key);
    if (it == fields.end()) throw FormatError(std::string("network config missing ") + key);
    std::size_t v = 0;
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw FormatError(std::string("network config ") + key + " is not a count: " + s);
    }
    return v;
  };
  NetworkConfig config;
  auto vit = fields.find("variant");
  if (vit == fields.end()) throw FormatError("network config missing variant");
  auto variant = parse_variant(vit->second);
  if (!variant) throw FormatError("unknown network variant: " + vit->second);
  config.variant = *variant;
  config.depth = number("depth");
  config.base_width = number("base_width");
  config.in_channels = number("in_channels");
  config.out_channels = number("out_channels");
  if (fields.size() != 5) throw FormatError("network config has unexpected fields");
  config.validate();
  return config;
}

template <typename T>
DoubleConv<T>::DoubleConv(std::size_t in_channels, std::size_t out_channels, Random& rng)
    : conv1_(in_channels, out_channels, ConvGeometry::same3x3(), rng),
      bn1_(out_channels),
      conv2_(out_channels, out_channels, ConvGeometry::same3x3(), rng),
      bn2_(out_channels) {}

template <typename T>
BasicTensor<T> DoubleConv<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x, Mode mode) {
  auto h = relu(tape, bn1_.forward(tape, conv1_.forward(tape, x), mode));
  return relu(tape, bn2_.forward(tape, conv2_.forward(tape, h), mode));
}

template <typename T>
void DoubleConv<T>::collect_parameters(const std::string& prefix, NamedTensors<T>& out) const {
  conv1_.collect_parameters(prefix + ".conv1", out);
  bn1_.collect_parameters(prefix + ".bn1", out);
  conv2_.collect_parameters(prefix + ".conv2", out);
  bn2_.collect_parameters(prefix + ".bn2", out);
}

template <typename T>
void DoubleConv<T>::collect_buffers(const std::string& prefix, NamedTensors<T>& out) const {
  bn1_.collect_buffers(prefix + ".bn1", out);
  bn2_.collect_buffers(prefix + ".bn2", out);
}

template <typename T>
Network<T>::Network(NetworkConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Random rng(seed);
  const std::size_t levels = config_.depth - 1;

  std::size_t in = config_.in_channels;
  for (std::size_t level = 1; level <= levels; ++level) {
    encoders_.push_back({DoubleConv<T>(in, config_.width(level), rng), MaxPool2D<T>{}});
    in = config_.width(level);
  }
  bottom_ = DoubleConv<T>(in, config_.width(config_.depth), rng);
  bottom_up_ = TransposedConv2D<T>(config_.width(config_.depth), config_.width(levels), rng);

  decoders_.resize(levels);
  for (std::size_t level = levels; level >= 1; --level) {
    DecoderLevel& dec = decoders_[level - 1];
    const std::size_t width = config_.width(level);
    switch (config_.variant) {
      case Variant::unet:
        break;
      case Variant::attention:
        dec.gates.emplace_back(width, width, rng);
        break;
      case Variant::advanced_attention:
        for (std::size_t src = 1; src <= level; ++src) {
          dec.projections.emplace_back(config_.width(src), config_.source_width(level), ConvGeometry::same3x3(), rng);
        }
        dec.gates.emplace_back(config_.bundle_width(level), width, rng);
        break;
      case Variant::full_attention:
        for (std::size_t src = 1; src <= level; ++src) {
          dec.gates.emplace_back(config_.width(src), width, rng);
          dec.projections.emplace_back(config_.width(src), config_.source_width(level), ConvGeometry::same3x3(), rng);
        }
        break;
    }
    dec.block = DoubleConv<T>(config_.bundle_width(level) + width, width, rng);
    if (level > 1) {
      dec.up = TransposedConv2D<T>(width, config_.width(level - 1), rng);
    } else {
      dec.head = Conv2D<T>(width, config_.out_channels, ConvGeometry::pointwise(), rng);
    }
  }

  // Registration doubles as the uniqueness check for checkpoint keys.
  auto names = parameters();
  auto more = buffers();
  names.insert(names.end(), more.begin(), more.end());
  std::sort(names.begin(), names.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < names.size(); ++i) {
    if (names[i].first == names[i - 1].first) throw std::logic_error("duplicate tensor name " + names[i].first);
  }
}

template <typename T>
BasicTensor<T> Network<T>::skip_bundle(BasicTape<T>& tape, std::span<const BasicTensor<T>> encoder_outputs,
                                       std::size_t level, const BasicTensor<T>& decoder_state) const {
  if (level < 1 || level > decoders_.size() || encoder_outputs.size() < level) {
    throw ContractError("skip_bundle: level " + std::to_string(level) + " out of range");
  }
  const DecoderLevel& dec = decoders_[level - 1];
  const BasicTensor<T>& native = encoder_outputs[level - 1];

  auto to_level = [&](std::size_t src) {
    BasicTensor<T> s = encoder_outputs[src - 1];
    for (std::size_t k = src; k < level; ++k) s = max_pool2d(tape, s);
    const Shape ss = s.shape();
    const Shape ds = decoder_state.shape();
    if (ss.h != ds.h || ss.w != ds.w) {
      throw std::logic_error("skip_bundle: source level " + std::to_string(src) + " reached " + to_string(ss) +
                             " instead of the decoder resolution " + to_string(ds));
    }
    return s;
  };
  auto join = [&](std::vector<BasicTensor<T>>& parts) {
    if (parts.size() == 1) return parts.front();
    return concat_channels<T>(tape, parts);
  };

  switch (config_.variant) {
    case Variant::unet:
      return native;
    case Variant::attention:
      return dec.gates[0].forward(tape, native, decoder_state);
    case Variant::advanced_attention: {
      std::vector<BasicTensor<T>> parts;
      for (std::size_t src = 1; src <= level; ++src) {
        parts.push_back(dec.projections[src - 1].forward(tape, to_level(src)));
      }
      return dec.gates[0].forward(tape, join(parts), decoder_state);
    }
    case Variant::full_attention: {
      std::vector<BasicTensor<T>> parts;
      for (std::size_t src = 1; src <= level; ++src) {
        auto gated = dec.gates[src - 1].forward(tape, to_level(src), decoder_state);
        parts.push_back(dec.projections[src - 1].forward(tape, gated));
      }
      return join(parts);
    }
  }
  return native;
}

template <typename T>
BasicTensor<T> Network<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x, Mode mode) {
  config_.check_input(x.shape());
  std::vector<BasicTensor<T>> skips;
  skips.reserve(encoders_.size());
  BasicTensor<T> h = x;
  for (auto& enc : encoders_) {
    h = enc.block.forward(tape, h, mode);
    skips.push_back(h);
    h = enc.pool.forward(tape, h);
  }
  h = bottom_.forward(tape, h, mode);
  BasicTensor<T> up = bottom_up_.forward(tape, h);
  for (std::size_t level = decoders_.size(); level >= 1; --level) {
    DecoderLevel& dec = decoders_[level - 1];
    const BasicTensor<T> parts[2] = {skip_bundle(tape, skips, level, up), up};
    h = dec.block.forward(tape, concat_channels<T>(tape, parts), mode);
    if (level == 1) return dec.head.forward(tape, h);
    up = dec.up.forward(tape, h);
  }
  throw std::logic_error("network has no decoder levels");
}

template <typename T>
NamedTensors<T> Network<T>::parameters() const {
  NamedTensors<T> out;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    encoders_[i].block.collect_parameters("enc" + std::to_string(i + 1), out);
  }
  bottom_.collect_parameters("bottom", out);
  bottom_up_.collect_parameters("bottom.up", out);
  for (std::size_t level = decoders_.size(); level >= 1; --level) {
    const DecoderLevel& dec = decoders_[level - 1];
    const std::string prefix = "dec" + std::to_string(level);
    for (std::size_t j = 0; j < dec.projections.size(); ++j) {
      dec.projections[j].collect_parameters(prefix + ".proj" + std::to_string(j + 1), out);
    }
    if (config_.variant == Variant::full_attention) {
      for (std::size_t j = 0; j < dec.gates.size(); ++j) {
        dec.gates[j].collect_parameters(prefix + ".gate" + std::to_string(j + 1), out);
      }
    } else if (!dec.gates.empty()) {
      dec.gates[0].collect_parameters(prefix + ".gate", out);
    }
    dec.block.collect_parameters(prefix, out);
    if (level > 1) {
      dec.up.collect_parameters(prefix + ".up", out);
    } else {
      dec.head.collect_parameters("head", out);
    }
  }
  return out;
}

template <typename T>
NamedTensors<T> Network<T>::buffers() const {
  NamedTensors<T> out;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    encoders_[i].block.collect_buffers("enc" + std::to_string(i + 1), out);
  }
  bottom_.collect_buffers("bottom", out);
  for (std::size_t level = decoders_.size(); level >= 1; --level) {
    decoders_[level - 1].block.collect_buffers("dec" + std::to_string(level), out);
  }
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : parameters()) total += t.numel();
  return total;
}

template <typename T>
std::vector<std::uint64_t> Network<T>::batch_norm_updates() const {
  std::vector<std::uint64_t> out;
  auto take = [&](const DoubleConv<T>& b) {
    for (const auto* bn : b.norms()) out.push_back(bn->updates());
  };
  for (const auto& enc : encoders_) take(enc.block);
  take(bottom_);
  for (std::size_t level = decoders_.size(); level >= 1; --level) take(decoders_[level - 1].block);
  return out;
}

template <typename T>
void Network<T>::force_gates_open() {
  for (auto& dec : decoders_) {
    for (auto& gate : dec.gates) gate.force_open();
  }
}

template <typename T>
std::size_t Network<T>::copy_state_from(const Network& other) {
  auto index = [](NamedTensors<T> list) {
    std::map<std::string, BasicTensor<T>> m;
    for (auto& [name, t] : list) m.emplace(name, t);
    return m;
  };
  auto source = index(other.parameters());
  for (auto& [name, t] : other.buffers()) source.emplace(name, t);
  auto mine = parameters();
  auto bufs = buffers();
  mine.insert(mine.end(), bufs.begin(), bufs.end());

  std::size_t copied = 0;
  for (auto& [name, t] : mine) {
    auto it = source.find(name);
    if (it == source.end() || it->second.shape() != t.shape()) continue;
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
    ++copied;
  }
  return copied;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& [name, t] : parameters()) t.zero_grad();
}

template class DoubleConv<float>;
template class DoubleConv<double>;
template class Network<float>;
template class Network<double>;

}  // namespace fasn
