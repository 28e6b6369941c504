#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fasn/image_io.hpp"
#include "fasn/tensor.hpp"

namespace fasn {

/// Width x height, in that order (as image sizes are usually quoted).
struct ImageSize {
  std::size_t width = 0;
  std::size_t height = 0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Parses "WxH", e.g. "386x256".
ImageSize parse_image_size(const std::string& text);

/// An image (1,3,H,W) in [0,1] and its binary mask (1,1,H,W).
///
/// `valid_height`/`valid_width` give the region that holds real pixels when the
/// pair has been edge-padded to a network-friendly size.
struct SamplePair {
  Tensor image;
  Tensor mask;
  std::string source;
  std::size_t valid_height = 0;
  std::size_t valid_width = 0;
};

/// 8-bit image -> (1,C,H,W) tensor scaled to [0,1]. Grayscale is replicated
/// when `channels` is 3.
Tensor image_to_tensor(const Image8& image, std::size_t channels);

/// (1,C,H,W) in [0,1] -> 8-bit image (C must be 1 or 3), rounding v*255.
Image8 tensor_to_image(const Tensor& t);

/// Half-pixel-centred bilinear resampling of every plane.
Tensor resize_bilinear(const Tensor& x, std::size_t height, std::size_t width);

/// Nearest-neighbour resampling of every plane.
Tensor resize_nearest(const Tensor& x, std::size_t height, std::size_t width);

/// Extends the bottom and right edges by replication so H and W are multiples of `multiple`.
Tensor pad_to_multiple(const Tensor& x, std::size_t multiple);

/// The top-left height x width window.
Tensor crop(const Tensor& x, std::size_t height, std::size_t width);

Tensor flip_horizontal(const Tensor& x);
Tensor flip_vertical(const Tensor& x);

/// Values >= threshold become 1, the rest 0.
Tensor binarize(const Tensor& x, float threshold);

/// Loads an image/mask pair. The image is resized bilinearly, the mask by
/// nearest neighbour and then thresholded at 128/255. Without a target the
/// native size is kept and the two files must agree in size.
SamplePair load_sample(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                       std::optional<ImageSize> target = std::nullopt);

/// {identity, horizontal flip, vertical flip, both}; image and mask move together.
std::array<SamplePair, 4> augment_flips(const SamplePair& s);

/// Each pair followed by its three flipped copies.
std::vector<SamplePair> augment_all(std::span<const SamplePair> samples);

/// Stacks the image (or mask) tensors of `samples` along the batch axis.
Tensor stack_images(std::span<const SamplePair> samples);
Tensor stack_masks(std::span<const SamplePair> samples);

struct SynthParams {
  std::size_t crack_count = 1;
  std::size_t distractor_count = 3;
  /// Dilation radius (pixels) around the one-pixel crack polyline.
  double min_radius = 1.0;
  double max_radius = 2.0;
  std::size_t min_segments = 5;
  std::size_t max_segments = 9;
};

/// Synthetic crack photo: smooth noisy background, optional blob distractors and
/// dark polyline cracks. The mask is exactly the set of crack pixels. Pixel values
/// are quantized to k/255 so the pair survives a PNG round trip unchanged.
/// W and H must be divisible by 16.
SamplePair synth_crack(std::uint64_t seed, ImageSize size, const SynthParams& params = {});

enum class Split { train, val };

std::string_view split_name(Split s);

struct DatasetEntry {
  std::string stem;
  std::filesystem::path image;
  std::filesystem::path mask;
  Split split = Split::train;
};

/// Pairs of `images/<stem>.<png|jpg|jpeg>` and `masks/<stem>.png`, sorted by stem.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;

  std::vector<DatasetEntry> select(Split split) const;
};

/// Pairs images with masks by stem; an image without a mask (or a mask without
/// an image) is an error that lists the unmatched stems.
DatasetManifest scan_dataset(const std::filesystem::path& root);

/// Seeded assignment of round(fraction * n) entries to the validation split. With
/// a positive fraction and at least two entries both splits are non-empty.
void assign_splits(DatasetManifest& manifest, double val_fraction, std::uint64_t seed);

/// `stem<TAB>split` lines.
void write_manifest(std::ostream& out, const DatasetManifest& manifest);

/// Applies the splits listed in a manifest file; every listed stem must exist and
/// every entry must be listed.
void apply_manifest(DatasetManifest& manifest, std::istream& in);

/// Loads one split, resizing to `target` if given and edge-padding to multiples of `multiple`.
std::vector<SamplePair> load_split(const DatasetManifest& manifest, Split split,
                                   std::optional<ImageSize> target, std::size_t multiple);

}  // namespace fasn
