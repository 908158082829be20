#include "dgseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dgseg {

double mask_iou(const Mask& a, const Mask& b) {
    if (a.bits.size() != b.bits.size()) throw std::invalid_argument("mask_iou: mask shapes differ");
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += a.bits[i] & b.bits[i];
        uni += a.bits[i] | b.bits[i];
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> coco_iou_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
    return t;
}

namespace {

struct Det {
    double score;
    int image;
    int index;
};

/// AP of one class at one threshold, or NaN when the class has no ground truth.
double class_ap(const std::vector<InstanceSet>& preds, const std::vector<InstanceSet>& gts,
                const std::vector<std::vector<std::vector<double>>>& ious, int cls, double thr) {
    long num_gt = 0;
    for (const auto& g : gts)
        for (int c : g.classes) num_gt += c == cls;
    if (num_gt == 0) return std::numeric_limits<double>::quiet_NaN();

    std::vector<Det> dets;
    for (std::size_t i = 0; i < preds.size(); ++i)
        for (std::size_t d = 0; d < preds[i].size(); ++d)
            if (preds[i].classes[d] == cls) dets.push_back({(*preds[i].scores)[d], static_cast<int>(i), static_cast<int>(d)});
    std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });

    std::vector<std::vector<char>> taken(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) taken[i].assign(gts[i].size(), 0);
    std::vector<double> precision, recall;
    long tp = 0, fp = 0;
    for (const auto& d : dets) {
        const auto& g = gts[static_cast<std::size_t>(d.image)];
        int best = -1;
        double best_iou = thr;
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (g.classes[k] != cls || taken[static_cast<std::size_t>(d.image)][k]) continue;
            const double iou = ious[static_cast<std::size_t>(d.image)][static_cast<std::size_t>(d.index)][k];
            if (iou >= best_iou) {
                // Strictly better IoU wins; equal IoU keeps the earlier gt.
                if (best < 0 || iou > best_iou) {
                    best_iou = iou;
                    best = static_cast<int>(k);
                }
            }
        }
        if (best >= 0) {
            taken[static_cast<std::size_t>(d.image)][static_cast<std::size_t>(best)] = 1;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    }
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

    double sum = 0.0;
    for (int r = 0; r <= 100; ++r) {
        const double level = r / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), level);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / 101.0;
}

double nan_mean(const std::vector<double>& v) {
    double s = 0.0;
    int n = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            s += x;
            ++n;
        }
    return n == 0 ? 0.0 : s / n;
}

}  // namespace

ApResult evaluate_ap(const std::vector<InstanceSet>& preds, const std::vector<InstanceSet>& gts, int num_classes,
                     const std::vector<double>& thresholds) {
    if (preds.size() != gts.size()) throw DataError("evaluate_ap: prediction and ground-truth image counts differ");
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (int c : preds[i].classes)
            if (c < 0 || c >= num_classes) throw DataError("evaluate_ap: prediction class index out of range");
        for (int c : gts[i].classes)
            if (c < 0 || c >= num_classes) throw DataError("evaluate_ap: ground-truth class index out of range");
        if (!preds[i].empty() && (!preds[i].scores || preds[i].scores->size() != preds[i].size()))
            throw DataError("evaluate_ap: predictions must carry one score per instance");
    }
    // ious[image][pred][gt]
    std::vector<std::vector<std::vector<double>>> ious(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ious[i].resize(preds[i].size());
        for (std::size_t d = 0; d < preds[i].size(); ++d)
            for (std::size_t k = 0; k < gts[i].size(); ++k) ious[i][d].push_back(mask_iou(preds[i].masks[d], gts[i].masks[k]));
    }

    ApResult r;
    // table[class][threshold]
    std::vector<std::vector<double>> table(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c)
        for (double t : thresholds) table[static_cast<std::size_t>(c)].push_back(class_ap(preds, gts, ious, c, t));

    std::vector<double> all;
    for (int c = 0; c < num_classes; ++c) {
        const auto& row = table[static_cast<std::size_t>(c)];
        const bool has_gt = !row.empty() && !std::isnan(row.front());
        r.per_class.push_back(has_gt ? nan_mean(row) : std::numeric_limits<double>::quiet_NaN());
        all.insert(all.end(), row.begin(), row.end());
    }
    r.ap = nan_mean(all);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        std::vector<double> col;
        for (const auto& row : table) col.push_back(row[t]);
        r.per_threshold.push_back(nan_mean(col));
    }
    std::vector<double> at50;
    for (int c = 0; c < num_classes; ++c) at50.push_back(class_ap(preds, gts, ious, c, 0.5));
    r.ap50 = nan_mean(at50);
    return r;
}

InstanceSet detections(const PredictionSet& pred) {
    InstanceSet out;
    out.height = pred.height;
    out.width = pred.width;
    out.scores = std::vector<double>{};
    const int c = pred.num_classes();
    for (int q = 0; q < pred.num_queries(); ++q) {
        Mask m(pred.height, pred.width);
        int area = 0;
        for (Eigen::Index i = 0; i < pred.mask_logits.cols(); ++i) {
            const std::uint8_t b = pred.mask_logits(q, i) > 0.0 ? 1 : 0;
            m.bits[static_cast<std::size_t>(i)] = b;
            area += b;
        }
        if (area == 0) continue;
        const Eigen::VectorXd prob = softmax(pred.class_logits.row(q).transpose());
        Eigen::Index cls = 0;
        const double score = prob.head(c).maxCoeff(&cls);
        out.masks.push_back(std::move(m));
        out.classes.push_back(static_cast<int>(cls));
        out.scores->push_back(score);
    }
    return out;
}

nlohmann::json ap_to_json(const ApResult& r) {
    nlohmann::json j;
    j["AP"] = r.ap;
    j["AP50"] = r.ap50;
    j["per_class"] = nlohmann::json::array();
    for (double v : r.per_class) {
        if (std::isnan(v))
            j["per_class"].push_back(nullptr);
        else
            j["per_class"].push_back(v);
    }
    return j;
}

}  // namespace dgseg
