#include "dgseg/pseudo.hpp"

#include <algorithm>
#include <numeric>

namespace dgseg {

InstanceSet extract(const PredictionSet& pred, double alpha_C, int alpha_S) {
    const int N = pred.num_queries();
    const int c = pred.num_classes();
    const auto P = pred.mask_logits.cols();

    struct Kept {
        double score;
        int query;
        int cls;
        Mask mask;
    };
    std::vector<Kept> kept;
    for (int q = 0; q < N; ++q) {
        const Eigen::VectorXd prob = softmax(pred.class_logits.row(q).transpose());
        Eigen::Index best_real = 0;
        const double score = prob.head(c).maxCoeff(&best_real);
        Eigen::Index best_all = 0;
        prob.maxCoeff(&best_all);
        if (best_all == c || score < alpha_C) continue;
        Mask m(pred.height, pred.width);
        int area = 0;
        for (Eigen::Index i = 0; i < P; ++i) {
            // sigmoid(x) > 0.5  <=>  x > 0
            const std::uint8_t b = pred.mask_logits(q, i) > 0.0 ? 1 : 0;
            m.bits[static_cast<std::size_t>(i)] = b;
            area += b;
        }
        if (area < alpha_S || area == 0) continue;
        kept.push_back({score, q, static_cast<int>(best_real), std::move(m)});
    }
    std::stable_sort(kept.begin(), kept.end(), [](const Kept& a, const Kept& b) { return a.score > b.score; });

    InstanceSet out;
    out.height = pred.height;
    out.width = pred.width;
    out.scores = std::vector<double>{};
    for (auto& k : kept) {
        out.masks.push_back(std::move(k.mask));
        out.classes.push_back(k.cls);
        out.scores->push_back(k.score);
    }
    return out;
}

std::vector<double> top_confidences(const InstanceSet& pseudo, int top_k) {
    if (pseudo.empty()) return {0.0};
    std::vector<double> top = pseudo.scores.value_or(std::vector<double>(pseudo.size(), 0.0));
    std::stable_sort(top.begin(), top.end(), std::greater<>());
    top.resize(std::min<std::size_t>(top.size(), static_cast<std::size_t>(std::max(top_k, 1))));
    return top;
}

DualPseudo dual_pseudo(const SegModel& teacher, const Image& rgb_weak, const Image& depth_rgb,
                       const FeatureMap* depth_features, const Config& cfg) {
    DualPseudo out;
    out.rgb_pred = teacher.forward(rgb_weak, depth_features);
    out.rgb = extract(out.rgb_pred, cfg.alpha_C, cfg.alpha_S);
    out.depth.height = rgb_weak.height;
    out.depth.width = rgb_weak.width;
    out.depth.scores = std::vector<double>{};
    if (cfg.components.ds) out.depth = extract(teacher.forward(depth_rgb, depth_features), cfg.alpha_C, cfg.alpha_S);
    return out;
}

}  // namespace dgseg
