#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fasn/tensor.hpp"

namespace fasn {

/// Intersection-over-union of one prediction against its ground truth.
struct IoUResult {
  std::uint64_t intersection = 0;
  std::uint64_t union_count = 0;
  /// |I| / |U|, or 1 when both masks are empty.
  double iou = 1.0;
};

IoUResult iou_from_counts(std::uint64_t intersection, std::uint64_t union_count);

/// Binarizes `pred_probs` at `threshold` (p >= threshold is foreground) and compares
/// it with the binary `gt_mask` over every pixel.
IoUResult iou(const Tensor& pred_probs, const Tensor& gt_mask, float threshold = 0.5f);

/// Unweighted mean of per-image IoU.
double miou(std::span<const IoUResult> results);

/// Per-image results plus their mean; serialized as `stem<TAB>iou` lines and a
/// final `mIoU<TAB>value` line.
struct EvaluationReport {
  std::vector<std::pair<std::string, IoUResult>> images;

  double mean() const;
  void write(std::ostream& out) const;
};

}  // namespace fasn
