#pragma once

#include <vector>

#include "dgseg/core.hpp"
#include "dgseg/model.hpp"

namespace dgseg {

/// Thresholded pseudo-instances from one teacher prediction. A query survives
/// when its best real-class probability is >= alpha_C, its overall argmax is
/// not the no-object class, and its binarized mask (sigmoid > 0.5) has at
/// least alpha_S pixels. Output is sorted by descending score.
InstanceSet extract(const PredictionSet& pred, double alpha_C, int alpha_S);

/// Highest scores among the pseudo-instances of one image (at most top_k).
/// An image without pseudo-instances yields a single 0.
std::vector<double> top_confidences(const InstanceSet& pseudo, int top_k = 1);

struct DualPseudo {
    InstanceSet rgb;
    InstanceSet depth;
    PredictionSet rgb_pred;  // teacher output on the RGB view
};

/// Two teacher passes (RGB view, colormapped depth view) turned into two
/// pseudo-label sets. With DS off the depth pass is skipped and `depth` is
/// empty. `depth_features` is required only when the teacher fuses depth.
DualPseudo dual_pseudo(const SegModel& teacher, const Image& rgb_weak, const Image& depth_rgb,
                       const FeatureMap* depth_features, const Config& cfg);

}  // namespace dgseg
