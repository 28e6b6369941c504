#include "fasn/metrics.hpp"

#include <iomanip>

namespace fasn {

IoUResult iou_from_counts(std::uint64_t intersection, std::uint64_t union_count) {
  if (intersection > union_count) throw ContractError("iou: intersection exceeds union");
  IoUResult r{intersection, union_count, 1.0};
  if (union_count > 0) r.iou = static_cast<double>(intersection) / static_cast<double>(union_count);
  return r;
}

IoUResult iou(const Tensor& pred_probs, const Tensor& gt_mask, float threshold) {
  if (pred_probs.shape() != gt_mask.shape()) {
    throw ShapeError("iou: prediction " + to_string(pred_probs.shape()) + " vs ground truth " +
                     to_string(gt_mask.shape()));
  }
  auto p = pred_probs.data();
  auto g = gt_mask.data();
  std::uint64_t inter = 0;
  std::uint64_t uni = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i] != 0.0f && g[i] != 1.0f) throw ContractError("iou: ground-truth mask must be binary");
    const bool a = p[i] >= threshold;
    const bool b = g[i] == 1.0f;
    inter += static_cast<std::uint64_t>(a && b);
    uni += static_cast<std::uint64_t>(a || b);
  }
  return iou_from_counts(inter, uni);
}

double miou(std::span<const IoUResult> results) {
  if (results.empty()) throw ContractError("miou of an empty result list");
  double total = 0.0;
  for (const auto& r : results) total += r.iou;
  return total / static_cast<double>(results.size());
}

double EvaluationReport::mean() const {
  std::vector<IoUResult> all;
  all.reserve(images.size());
  for (const auto& [stem, r] : images) all.push_back(r);
  return miou(all);
}

void EvaluationReport::write(std::ostream& out) const {
  out << std::fixed << std::setprecision(6);
  for (const auto& [stem, r] : images) out << stem << '\t' << r.iou << '\n';
  out << "mIoU\t" << mean() << '\n';
}

}  // namespace fasn
