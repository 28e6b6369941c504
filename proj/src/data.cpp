#include "fasn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>

#include "fasn/random.hpp"

namespace fasn {

ImageSize parse_image_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw FormatError("size must look like WxH, got '" + text + "'");
  ImageSize size;
  auto parse = [&](std::size_t begin, std::size_t end, std::size_t& value) {
    auto [ptr, ec] = std::from_chars(text.data() + begin, text.data() + end, value);
    if (ec != std::errc{} || ptr != text.data() + end || value == 0) {
      throw FormatError("size must look like WxH with positive integers, got '" + text + "'");
    }
  };
  parse(0, x, size.width);
  parse(x + 1, text.size(), size.height);
  return size;
}

Tensor image_to_tensor(const Image8& image, std::size_t channels) {
  if (channels != 1 && channels != 3) throw ShapeError("image_to_tensor: channels must be 1 or 3");
  const std::size_t plane = image.width * image.height;
  std::vector<float> data(channels * plane);
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t src_c = image.channels == 1 ? 0 : std::min(c, image.channels - 1);
    for (std::size_t i = 0; i < plane; ++i) {
      data[c * plane + i] = static_cast<float>(image.pixels[i * image.channels + src_c]) / 255.0f;
    }
  }
  return Tensor::from_data(make_shape(1, channels, image.height, image.width), std::move(data));
}

Image8 tensor_to_image(const Tensor& t) {
  const Shape s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) throw ShapeError("tensor_to_image needs (1,1|3,H,W), got " + to_string(s));
  Image8 img{s.w, s.h, s.c, std::vector<std::uint8_t>(s.numel())};
  auto v = t.data();
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const float x = std::clamp(v[c * s.plane() + i], 0.0f, 1.0f);
      img.pixels[i * s.c + c] = static_cast<std::uint8_t>(std::lround(x * 255.0f));
    }
  }
  return img;
}

Tensor resize_bilinear(const Tensor& x, std::size_t height, std::size_t width) {
  const Shape s = x.shape();
  if (s.h == height && s.w == width) return x.clone();
  const Shape os = make_shape(s.n, s.c, height, width);
  std::vector<float> out(os.numel());
  auto v = x.data();
  const double sy = static_cast<double>(s.h) / static_cast<double>(height);
  const double sx = static_cast<double>(s.w) / static_cast<double>(width);
  auto source = [](std::size_t dst, double scale, std::size_t extent) {
    const double p = std::clamp((static_cast<double>(dst) + 0.5) * scale - 0.5, 0.0, static_cast<double>(extent - 1));
    const auto lo = static_cast<std::size_t>(std::floor(p));
    const std::size_t hi = std::min(lo + 1, extent - 1);
    return std::tuple{lo, hi, p - static_cast<double>(lo)};
  };
  for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
    const float* src = v.data() + plane * s.plane();
    float* dst = out.data() + plane * os.plane();
    for (std::size_t i = 0; i < height; ++i) {
      const auto [y0, y1, wy] = source(i, sy, s.h);
      for (std::size_t j = 0; j < width; ++j) {
        const auto [x0, x1, wx] = source(j, sx, s.w);
        const double top = (1.0 - wx) * src[y0 * s.w + x0] + wx * src[y0 * s.w + x1];
        const double bottom = (1.0 - wx) * src[y1 * s.w + x0] + wx * src[y1 * s.w + x1];
        dst[i * width + j] = static_cast<float>((1.0 - wy) * top + wy * bottom);
      }
    }
  }
  return Tensor::from_data(os, std::move(out));
}

Tensor resize_nearest(const Tensor& x, std::size_t height, std::size_t width) {
  const Shape s = x.shape();
  const Shape os = make_shape(s.n, s.c, height, width);
  std::vector<float> out(os.numel());
  auto v = x.data();
  auto source = [](std::size_t dst, std::size_t from, std::size_t to) {
    // floor((dst + 0.5) * from / to), in integers.
    return std::min((2 * dst + 1) * from / (2 * to), from - 1);
  };
  for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
    for (std::size_t i = 0; i < height; ++i) {
      const std::size_t si = source(i, s.h, height);
      for (std::size_t j = 0; j < width; ++j) {
        out[plane * os.plane() + i * width + j] = v[plane * s.plane() + si * s.w + source(j, s.w, width)];
      }
    }
  }
  return Tensor::from_data(os, std::move(out));
}

Tensor pad_to_multiple(const Tensor& x, std::size_t multiple) {
  const Shape s = x.shape();
  const std::size_t h = (s.h + multiple - 1) / multiple * multiple;
  const std::size_t w = (s.w + multiple - 1) / multiple * multiple;
  if (h == s.h && w == s.w) return x;
  const Shape os{s.n, s.c, h, w};
  std::vector<float> out(os.numel());
  auto v = x.data();
  for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t si = std::min(i, s.h - 1);
      for (std::size_t j = 0; j < w; ++j) {
        out[plane * os.plane() + i * w + j] = v[plane * s.plane() + si * s.w + std::min(j, s.w - 1)];
      }
    }
  }
  return Tensor::from_data(os, std::move(out));
}

Tensor crop(const Tensor& x, std::size_t height, std::size_t width) {
  const Shape s = x.shape();
  if (height > s.h || width > s.w) throw ShapeError("crop larger than the tensor " + to_string(s));
  if (height == s.h && width == s.w) return x;
  const Shape os = make_shape(s.n, s.c, height, width);
  std::vector<float> out(os.numel());
  auto v = x.data();
  for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
    for (std::size_t i = 0; i < height; ++i) {
      std::copy_n(v.data() + plane * s.plane() + i * s.w, width, out.data() + plane * os.plane() + i * width);
    }
  }
  return Tensor::from_data(os, std::move(out));
}

Tensor flip_horizontal(const Tensor& x) {
  const Shape s = x.shape();
  std::vector<float> out(x.data().begin(), x.data().end());
  for (std::size_t row = 0; row < s.n * s.c * s.h; ++row) {
    std::reverse(out.begin() + static_cast<std::ptrdiff_t>(row * s.w),
                 out.begin() + static_cast<std::ptrdiff_t>((row + 1) * s.w));
  }
  return Tensor::from_data(s, std::move(out));
}

Tensor flip_vertical(const Tensor& x) {
  const Shape s = x.shape();
  std::vector<float> out(s.numel());
  auto v = x.data();
  for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
    for (std::size_t i = 0; i < s.h; ++i) {
      std::copy_n(v.data() + plane * s.plane() + (s.h - 1 - i) * s.w, s.w, out.data() + plane * s.plane() + i * s.w);
    }
  }
  return Tensor::from_data(s, std::move(out));
}

Tensor binarize(const Tensor& x, float threshold) {
  std::vector<float> out(x.numel());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] >= threshold ? 1.0f : 0.0f;
  return Tensor::from_data(x.shape(), std::move(out));
}

SamplePair load_sample(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                       std::optional<ImageSize> target) {
  if (!std::filesystem::exists(mask_path)) throw FormatError("missing mask " + mask_path.string());
  const Image8 image = read_image(image_path);
  const Image8 mask = read_image(mask_path);
  Tensor img = image_to_tensor(image, 3);
  // Mask intensity comes from the first channel; labels are nominally gray.
  Tensor raw_mask = image_to_tensor(Image8{mask.width, mask.height, 1, [&] {
                                             std::vector<std::uint8_t> g(mask.width * mask.height);
                                             for (std::size_t i = 0; i < g.size(); ++i) g[i] = mask.pixels[i * mask.channels];
                                             return g;
                                           }()},
                                    1);
  if (target) {
    img = resize_bilinear(img, target->height, target->width);
    raw_mask = resize_nearest(raw_mask, target->height, target->width);
  } else if (image.width != mask.width || image.height != mask.height) {
    throw ShapeError("image " + image_path.string() + " and mask " + mask_path.string() + " differ in size");
  }
  SamplePair s;
  s.image = img;
  s.mask = binarize(raw_mask, 128.0f / 255.0f);
  s.source = image_path.stem().string();
  s.valid_height = s.image.shape().h;
  s.valid_width = s.image.shape().w;
  return s;
}

std::array<SamplePair, 4> augment_flips(const SamplePair& s) {
  auto make = [&](Tensor image, Tensor mask, const char* suffix) {
    SamplePair out = s;
    out.image = std::move(image);
    out.mask = std::move(mask);
    out.source = s.source + suffix;
    return out;
  };
  const Tensor hi = flip_horizontal(s.image);
  const Tensor hm = flip_horizontal(s.mask);
  return {make(s.image.clone(), s.mask.clone(), ""), make(hi, hm, "+h"),
          make(flip_vertical(s.image), flip_vertical(s.mask), "+v"),
          make(flip_vertical(hi), flip_vertical(hm), "+hv")};
}

std::vector<SamplePair> augment_all(std::span<const SamplePair> samples) {
  std::vector<SamplePair> out;
  out.reserve(samples.size() * 4);
  for (const auto& s : samples) {
    for (auto& a : augment_flips(s)) out.push_back(std::move(a));
  }
  return out;
}

namespace {

Tensor stack(std::span<const SamplePair> samples, Tensor SamplePair::*member) {
  if (samples.empty()) throw ContractError("cannot stack an empty batch");
  const Shape first = (samples[0].*member).shape();
  std::vector<float> data;
  data.reserve(first.numel() * samples.size());
  for (const auto& s : samples) {
    const Tensor& t = s.*member;
    if (t.shape() != first) {
      throw ShapeError("batch mixes shapes " + to_string(first) + " and " + to_string(t.shape()));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor::from_data(Shape{samples.size() * first.n, first.c, first.h, first.w}, std::move(data));
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax;
  const double dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = ax + t * dx - px;
  const double ey = ay + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

Tensor stack_images(std::span<const SamplePair> samples) { return stack(samples, &SamplePair::image); }
Tensor stack_masks(std::span<const SamplePair> samples) { return stack(samples, &SamplePair::mask); }

SamplePair synth_crack(std::uint64_t seed, ImageSize size, const SynthParams& params) {
  if (size.width == 0 || size.height == 0 || size.width % 16 != 0 || size.height % 16 != 0) {
    throw ShapeError("synthetic image dimensions must be divisible by 16, got " + std::to_string(size.width) + "x" +
                     std::to_string(size.height));
  }
  if (params.min_radius <= 0.0 || params.max_radius < params.min_radius || params.min_segments == 0 ||
      params.max_segments < params.min_segments) {
    throw ContractError("synth_crack: inconsistent crack parameters");
  }
  const std::size_t W = size.width;
  const std::size_t H = size.height;
  Random rng(seed);

  // Smooth value noise on a 16-px lattice plus per-pixel grain.
  constexpr std::size_t kCell = 16;
  const std::size_t gw = W / kCell + 2;
  const std::size_t gh = H / kCell + 2;
  std::vector<double> lattice(gw * gh);
  for (double& v : lattice) v = rng.uniform();
  const double base = rng.uniform(0.45, 0.7);
  const double amplitude = rng.uniform(0.1, 0.2);
  std::array<double, 3> tint{};
  for (double& t : tint) t = rng.uniform(0.92, 1.08);

  std::vector<double> gray(W * H);
  for (std::size_t i = 0; i < H; ++i) {
    const double fy = static_cast<double>(i) / kCell;
    const auto y0 = static_cast<std::size_t>(fy);
    const double ty = smoothstep(fy - static_cast<double>(y0));
    for (std::size_t j = 0; j < W; ++j) {
      const double fx = static_cast<double>(j) / kCell;
      const auto x0 = static_cast<std::size_t>(fx);
      const double tx = smoothstep(fx - static_cast<double>(x0));
      const double top = (1 - tx) * lattice[y0 * gw + x0] + tx * lattice[y0 * gw + x0 + 1];
      const double bottom = (1 - tx) * lattice[(y0 + 1) * gw + x0] + tx * lattice[(y0 + 1) * gw + x0 + 1];
      const double noise = (1 - ty) * top + ty * bottom;
      gray[i * W + j] = base + amplitude * (2.0 * noise - 1.0) + rng.uniform(-0.03, 0.03);
    }
  }

  for (std::size_t d = 0; d < params.distractor_count; ++d) {
    const double cx = rng.uniform(0.0, static_cast<double>(W));
    const double cy = rng.uniform(0.0, static_cast<double>(H));
    const double rx = rng.uniform(2.5, 7.0);
    const double ry = rng.uniform(2.5, 7.0);
    const double delta = rng.uniform(-0.2, 0.15);
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const double dx = (static_cast<double>(j) - cx) / rx;
        const double dy = (static_cast<double>(i) - cy) / ry;
        const double q = dx * dx + dy * dy;
        if (q < 1.0) gray[i * W + j] += delta * (1.0 - q);
      }
    }
  }

  std::vector<std::uint8_t> crack(W * H, 0);
  std::vector<double> darken(W * H, 1.0);
  const double span = static_cast<double>(std::min(W, H));
  for (std::size_t k = 0; k < params.crack_count; ++k) {
    std::vector<std::array<double, 2>> pts;
    double x = rng.uniform(0.1, 0.9) * static_cast<double>(W - 1);
    double y = rng.uniform(0.1, 0.9) * static_cast<double>(H - 1);
    double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    pts.push_back({x, y});
    const std::size_t segments = params.min_segments + rng.index(params.max_segments - params.min_segments + 1);
    for (std::size_t s = 0; s < segments; ++s) {
      angle += rng.uniform(-0.6, 0.6);
      const double len = rng.uniform(0.08, 0.14) * span;
      double nx = x + len * std::cos(angle);
      double ny = y + len * std::sin(angle);
      // Bounce off the borders.
      if (nx < 0.0 || nx > static_cast<double>(W - 1)) {
        angle = std::numbers::pi - angle;
        nx = std::clamp(nx, 0.0, static_cast<double>(W - 1));
      }
      if (ny < 0.0 || ny > static_cast<double>(H - 1)) {
        angle = -angle;
        ny = std::clamp(ny, 0.0, static_cast<double>(H - 1));
      }
      x = nx;
      y = ny;
      pts.push_back({x, y});
    }
    const double radius = rng.uniform(params.min_radius, params.max_radius);
    const double factor = rng.uniform(0.35, 0.55);
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        double best = radius + 1.0;
        for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
          best = std::min(best, segment_distance(static_cast<double>(j), static_cast<double>(i), pts[s][0],
                                                 pts[s][1], pts[s + 1][0], pts[s + 1][1]));
        }
        if (best <= radius) {
          crack[i * W + j] = 1;
          darken[i * W + j] = std::min(darken[i * W + j], factor);
        }
      }
    }
  }

  std::vector<float> image(3 * W * H);
  std::vector<float> mask(W * H);
  for (std::size_t p = 0; p < W * H; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(gray[p] * tint[c] * darken[p], 0.0, 1.0);
      image[c * W * H + p] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
    }
    mask[p] = crack[p] != 0 ? 1.0f : 0.0f;
  }
  SamplePair out;
  out.image = Tensor::from_data(Shape{1, 3, H, W}, std::move(image));
  out.mask = Tensor::from_data(Shape{1, 1, H, W}, std::move(mask));
  out.source = "synth_" + std::to_string(seed);
  out.valid_height = H;
  out.valid_width = W;
  return out;
}

std::string_view split_name(Split s) { return s == Split::train ? "train" : "val"; }

std::vector<DatasetEntry> DatasetManifest::select(Split split) const {
  std::vector<DatasetEntry> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

DatasetManifest scan_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path images = root / "images";
  const fs::path masks = root / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    throw FormatError("dataset " + root.string() + " must contain images/ and masks/ directories");
  }
  std::map<std::string, fs::path> image_files;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
    const std::string stem = entry.path().stem().string();
    if (!image_files.emplace(stem, entry.path()).second) {
      throw FormatError("dataset has two images with stem '" + stem + "'");
    }
  }
  std::set<std::string> mask_stems;
  for (const auto& entry : fs::directory_iterator(masks)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") mask_stems.insert(entry.path().stem().string());
  }
  std::string unmatched;
  for (const auto& [stem, path] : image_files) {
    if (mask_stems.count(stem) == 0) unmatched += " " + stem + " (no mask)";
  }
  for (const auto& stem : mask_stems) {
    if (image_files.count(stem) == 0) unmatched += " " + stem + " (no image)";
  }
  if (!unmatched.empty()) throw FormatError("unmatched dataset stems:" + unmatched);
  if (image_files.empty()) throw FormatError("dataset " + root.string() + " is empty");

  DatasetManifest manifest;
  manifest.root = root;
  for (const auto& [stem, path] : image_files) {
    manifest.entries.push_back({stem, path, masks / (stem + ".png"), Split::train});
  }
  return manifest;
}

void assign_splits(DatasetManifest& manifest, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ContractError("validation fraction must be in [0, 1)");
  const std::size_t n = manifest.entries.size();
  auto count = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(n)));
  if (val_fraction > 0.0 && n >= 2) count = std::clamp<std::size_t>(count, 1, n - 1);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Random rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t i = 0; i < n; ++i) {
    manifest.entries[order[i]].split = i < count ? Split::val : Split::train;
  }
}

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
  for (const auto& e : manifest.entries) out << e.stem << '\t' << split_name(e.split) << '\n';
}

void apply_manifest(DatasetManifest& manifest, std::istream& in) {
  std::map<std::string, Split> listed;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("manifest line " + std::to_string(line_no) + " has no tab");
    const std::string stem = line.substr(0, tab);
    const std::string split = line.substr(tab + 1);
    if (split != "train" && split != "val") {
      throw FormatError("manifest line " + std::to_string(line_no) + ": unknown split '" + split + "'");
    }
    listed[stem] = split == "train" ? Split::train : Split::val;
  }
  std::string problems;
  for (auto& e : manifest.entries) {
    auto it = listed.find(e.stem);
    if (it == listed.end()) {
      problems += " " + e.stem + " (not in manifest)";
      continue;
    }
    e.split = it->second;
    listed.erase(it);
  }
  for (const auto& [stem, split] : listed) problems += " " + stem + " (no such pair)";
  if (!problems.empty()) throw FormatError("manifest does not match the dataset:" + problems);
}

std::vector<SamplePair> load_split(const DatasetManifest& manifest, Split split, std::optional<ImageSize> target,
                                   std::size_t multiple) {
  std::vector<SamplePair> out;
  for (const auto& e : manifest.select(split)) {
    SamplePair s = load_sample(e.image, e.mask, target);
    s.source = e.stem;
    if (multiple > 1) {
      s.image = pad_to_multiple(s.image, multiple);
      s.mask = pad_to_multiple(s.mask, multiple);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace fasn
