#pragma once

#include <vector>

#include "dgseg/core.hpp"

namespace dgseg {

/// |a & b| / |a | b|; two empty masks give 0.
double mask_iou(const Mask& a, const Mask& b);

/// {0.50, 0.55, ..., 0.95}, each computed as an exact decimal quotient.
std::vector<double> coco_iou_thresholds();

struct ApResult {
    double ap = 0.0;
    double ap50 = 0.0;
    /// Mean over thresholds per class; NaN for classes without ground truth.
    std::vector<double> per_class;
    /// AP over classes at each requested threshold (same order as requested).
    std::vector<double> per_threshold;
};

/// COCO-style mask AP. Per (class, threshold): detections sorted by
/// descending score (ties by image index, then prediction index) are greedily
/// matched to the unmatched ground truth of highest IoU >= threshold; the
/// precision envelope is sampled at 101 recall points. Classes without ground
/// truth are left out of the means. AP50 is always reported at IoU 0.5.
/// Throws DataError on class indices outside [0, num_classes) or missing scores.
ApResult evaluate_ap(const std::vector<InstanceSet>& preds, const std::vector<InstanceSet>& gts, int num_classes,
                     const std::vector<double>& iou_thresholds = coco_iou_thresholds());

/// Detections for evaluation: every query with a non-empty binarized mask,
/// labelled with its best real class and that class's probability.
InstanceSet detections(const PredictionSet& pred);

nlohmann::json ap_to_json(const ApResult& r);

}  // namespace dgseg
