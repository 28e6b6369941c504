#include "fasn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <system_error>

namespace fasn {
namespace {

constexpr char kMagic[4] = {'F', 'A', 'S', 'N'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buffer_.insert(buffer_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor& t) {
    text(name);
    const Shape& s = t.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) f32(v);
  }
  const std::string& buffer() const { return buffer_; }

 private:
  std::string buffer_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint " + origin_ + " is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = text();
    std::size_t dims[4];
    for (auto& d : dims) d = u32();
    Shape shape;
    try {
      shape = make_shape(dims[0], dims[1], dims[2], dims[3]);
    } catch (const ShapeError&) {
      throw FormatError("checkpoint " + origin_ + ": tensor " + name + " has an invalid shape");
    }
    need(shape.numel() * 4);
    std::vector<float> values(shape.numel());
    for (float& v : values) v = f32();
    return {std::move(name), Tensor::from_data(shape, std::move(values))};
  }
  const char* peek(std::size_t n) {
    need(n);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

NamedTensors<float> deep_copy(const NamedTensors<float>& in) {
  NamedTensors<float> out;
  out.reserve(in.size());
  for (const auto& [name, t] : in) out.emplace_back(name, t.clone());
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  const std::size_t count = c.parameters.size() + c.buffers.size() + c.adam_first.size() + c.adam_second.size();
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& [name, t] : c.parameters) w.tensor("param:" + name, t);
  for (const auto& [name, t] : c.buffers) w.tensor("buffer:" + name, t);
  for (const auto& [name, t] : c.adam_first) w.tensor("adam.m:" + name, t);
  for (const auto& [name, t] : c.adam_second) w.tensor("adam.v:" + name, t);
  w.u64(c.adam_steps);
  w.f64(c.adam.learning_rate);
  w.f64(c.adam.beta1);
  w.f64(c.adam.beta2);
  w.f64(c.adam.eps);
  w.u64(c.epoch);
  w.text(to_text(c.network));
  w.text(c.rng_state);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("failed writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());

  if (std::memcmp(r.peek(4), kMagic, 4) != 0) throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path.string() + " has unsupported version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  const std::uint32_t count = r.u32();
  const std::pair<std::string_view, NamedTensors<float>*> groups[] = {
      {"param:", &c.parameters}, {"buffer:", &c.buffers}, {"adam.m:", &c.adam_first}, {"adam.v:", &c.adam_second}};
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, tensor] = r.tensor();
    bool placed = false;
    for (const auto& [prefix, group] : groups) {
      if (name.starts_with(prefix)) {
        group->emplace_back(name.substr(prefix.size()), std::move(tensor));
        placed = true;
        break;
      }
    }
    if (!placed) throw FormatError("checkpoint " + path.string() + ": unknown tensor record '" + name + "'");
  }
  c.adam_steps = r.u64();
  c.adam.learning_rate = r.f64();
  c.adam.beta1 = r.f64();
  c.adam.beta2 = r.f64();
  c.adam.eps = r.f64();
  c.epoch = r.u64();
  try {
    c.network = network_config_from_text(r.text());
  } catch (const std::exception& e) {
    throw FormatError("checkpoint " + path.string() + ": bad network config: " + e.what());
  }
  c.rng_state = r.text();
  if (!r.at_end()) throw FormatError("checkpoint " + path.string() + " has trailing bytes");
  return c;
}

Checkpoint snapshot(const Network<float>& net) {
  Checkpoint c;
  c.network = net.config();
  c.parameters = deep_copy(net.parameters());
  c.buffers = deep_copy(net.buffers());
  return c;
}

void load_weights(Network<float>& net, const Checkpoint& checkpoint) {
  if (!(checkpoint.network == net.config())) {
    throw ContractError("checkpoint network (" + std::string(variant_name(checkpoint.network.variant)) + ", base width " +
                        std::to_string(checkpoint.network.base_width) + ") does not match the requested network (" +
                        std::string(variant_name(net.config().variant)) + ", base width " +
                        std::to_string(net.config().base_width) + ")");
  }
  auto fill = [](const NamedTensors<float>& source, NamedTensors<float> targets, const char* kind) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : source) by_name[name] = &t;
    for (auto& [name, target] : targets) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError(std::string("checkpoint lacks ") + kind + " " + name);
      if (it->second->shape() != target.shape()) {
        throw FormatError(std::string("checkpoint ") + kind + " " + name + " has shape " +
                          to_string(it->second->shape()) + ", network expects " + to_string(target.shape()));
      }
      auto src = it->second->data();
      std::copy(src.begin(), src.end(), target.mutable_data().begin());
    }
  };
  fill(checkpoint.parameters, net.parameters(), "parameter");
  fill(checkpoint.buffers, net.buffers(), "buffer");
}

}  // namespace fasn
