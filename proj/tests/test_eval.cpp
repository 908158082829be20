#include <algorithm>

#include "doctest.h"
#include "dgseg/eval.hpp"
#include "oracles.hpp"

using namespace dgseg;

namespace {

Mask rect(int h, int w, int y0, int x0, int y1, int x1) {
    Mask m(h, w);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
    return m;
}

InstanceSet set_of(std::vector<Mask> masks, std::vector<int> classes, std::optional<std::vector<double>> scores = {}) {
    InstanceSet s;
    s.height = masks.empty() ? 8 : masks[0].height;
    s.width = masks.empty() ? 8 : masks[0].width;
    s.masks = std::move(masks);
    s.classes = std::move(classes);
    s.scores = std::move(scores);
    return s;
}

/// Random predictions: noisy copies of gt masks plus random rectangles.
InstanceSet random_predictions(Rng& rng, const InstanceSet& gt, int h, int w, int num_classes) {
    InstanceSet p;
    p.height = h;
    p.width = w;
    p.scores = std::vector<double>{};
    const int n = rng.uniform_int(0, 3);
    for (int k = 0; k < n; ++k) {
        Mask m;
        if (!gt.empty() && rng.bernoulli(0.6)) {
            m = gt.masks[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(gt.size()) - 1))];
            for (auto& b : m.bits)
                if (rng.bernoulli(0.15)) b ^= 1;
        } else {
            m = oracle::random_rect(rng, h, w);
        }
        if (m.area() == 0) continue;
        p.masks.push_back(std::move(m));
        p.classes.push_back(rng.bernoulli(0.7) && !gt.empty() ? gt.classes[0] : rng.uniform_int(0, num_classes - 1));
        // Coarse scores make ties common.
        p.scores->push_back(rng.uniform_int(1, 4) / 4.0);
    }
    return p;
}

}  // namespace

TEST_CASE("mask IoU examples") {
    const Mask a = rect(4, 6, 0, 0, 2, 4);
    const Mask b = rect(4, 6, 0, 2, 2, 6);
    CHECK(mask_iou(a, a) == 1.0);
    CHECK(mask_iou(a, rect(4, 6, 2, 0, 4, 4)) == 0.0);
    CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(mask_iou(Mask(4, 6), Mask(4, 6)) == 0.0);
    CHECK_THROWS_AS(mask_iou(a, Mask(2, 2)), std::invalid_argument);
}

TEST_CASE("thresholds are exact decimal quotients") {
    const auto t = coco_iou_thresholds();
    REQUIRE(t.size() == 10);
    CHECK(t[0] == 0.5);
    CHECK(t[2] == 0.6);
    CHECK(t[5] == 0.75);
    CHECK(t[9] == 0.95);
}

TEST_CASE("perfect and empty detectors") {
    Rng rng(1);
    std::vector<InstanceSet> gts, perfect, none;
    for (int i = 0; i < 4; ++i) {
        gts.push_back(oracle::random_disjoint_instances(rng, 8, 8, 3, 3));
        InstanceSet p = gts.back();
        p.scores = std::vector<double>(p.size(), 1.0);
        perfect.push_back(p);
        InstanceSet e;
        e.height = e.width = 8;
        none.push_back(e);
    }
    const ApResult r = evaluate_ap(perfect, gts, 3);
    CHECK(r.ap == 1.0);
    CHECK(r.ap50 == 1.0);
    const ApResult z = evaluate_ap(none, gts, 3);
    CHECK(z.ap == 0.0);
    CHECK(z.ap50 == 0.0);
}

TEST_CASE("a single detection at IoU 0.6") {
    // gt covers 10 pixels, prediction 6 of them.
    const Mask gt = rect(4, 5, 0, 0, 2, 5);
    const Mask pred = rect(4, 5, 0, 0, 2, 3);
    REQUIRE(mask_iou(gt, pred) == 0.6);
    const ApResult r = evaluate_ap({set_of({pred}, {1}, std::vector<double>{0.9})}, {set_of({gt}, {1})}, 3);
    CHECK(r.ap50 == 1.0);
    CHECK(r.per_threshold[5] == 0.0);
    CHECK(r.ap == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(r.per_class[1] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(std::isnan(r.per_class[0]));
}

TEST_CASE("a false positive ranked first halves the precision") {
    const Mask gt = rect(8, 8, 0, 0, 4, 4);
    const Mask miss = rect(8, 8, 5, 5, 8, 8);
    const ApResult r = evaluate_ap({set_of({miss, gt}, {0, 0}, std::vector<double>{0.9, 0.8})}, {set_of({gt}, {0})}, 1);
    CHECK(r.ap == doctest::Approx(0.5).epsilon(1e-15));
    const ApResult s = evaluate_ap({set_of({miss, gt}, {0, 0}, std::vector<double>{0.7, 0.8})}, {set_of({gt}, {0})}, 1);
    CHECK(s.ap == 1.0);
}

TEST_CASE("input validation") {
    const Mask m = rect(4, 4, 0, 0, 2, 2);
    CHECK_THROWS_AS(evaluate_ap({set_of({m}, {3}, std::vector<double>{1.0})}, {set_of({m}, {0})}, 3), DataError);
    CHECK_THROWS_AS(evaluate_ap({set_of({m}, {0}, std::vector<double>{1.0})}, {set_of({m}, {-1})}, 3), DataError);
    CHECK_THROWS_AS(evaluate_ap({set_of({m}, {0})}, {set_of({m}, {0})}, 3), DataError);
    CHECK_THROWS_AS(evaluate_ap({}, {set_of({m}, {0})}, 3), DataError);
}

TEST_CASE("agrees with exhaustive matching on small fixtures") {
    Rng rng(2);
    const auto thresholds = coco_iou_thresholds();
    for (int t = 0; t < 60; ++t) {
        const int images = rng.uniform_int(1, 2);
        std::vector<InstanceSet> gts, preds;
        for (int i = 0; i < images; ++i) {
            gts.push_back(oracle::random_disjoint_instances(rng, 6, 6, rng.uniform_int(1, 3), 2));
            preds.push_back(random_predictions(rng, gts.back(), 6, 6, 2));
        }
        const ApResult r = evaluate_ap(preds, gts, 2, thresholds);
        const auto b = oracle::brute_force_ap(preds, gts, 2, thresholds);
        CHECK(r.ap == b.ap);
        CHECK(r.ap50 == b.ap50);
        for (std::size_t k = 0; k < thresholds.size(); ++k) CHECK(r.per_threshold[k] == b.per_threshold[k]);
        CHECK(r.ap50 >= r.ap);
    }
}

TEST_CASE("prediction order does not matter when scores are distinct") {
    Rng rng(3);
    for (int t = 0; t < 30; ++t) {
        const InstanceSet gt = oracle::random_disjoint_instances(rng, 8, 8, 3, 3);
        InstanceSet p = random_predictions(rng, gt, 8, 8, 3);
        for (std::size_t k = 0; k < p.size(); ++k) (*p.scores)[k] = rng.uniform();
        const ApResult a = evaluate_ap({p}, {gt}, 3);
        InstanceSet q = p;
        std::reverse(q.masks.begin(), q.masks.end());
        std::reverse(q.classes.begin(), q.classes.end());
        std::reverse(q.scores->begin(), q.scores->end());
        const ApResult b = evaluate_ap({q}, {gt}, 3);
        CHECK(a.ap == b.ap);
        CHECK(a.ap50 == b.ap50);
        CHECK(a.ap50 >= a.ap);
    }
}

TEST_CASE("detections keep every query with a non-empty mask") {
    PredictionSet p;
    p.height = p.width = 2;
    p.class_logits = RowMatrix::Zero(3, 3);
    p.class_logits(0, 1) = 2.0;
    p.class_logits(1, 2) = 5.0;  // no-object still reported with its best real class
    p.mask_logits = RowMatrix::Constant(3, 4, -1.0);
    p.mask_logits(0, 0) = 1.0;
    p.mask_logits(1, 3) = 1.0;
    const InstanceSet d = detections(p);
    REQUIRE(d.size() == 2);
    CHECK(d.classes[0] == 1);
    CHECK(d.masks[1].bits == std::vector<std::uint8_t>{0, 0, 0, 1});
    CHECK((*d.scores)[0] == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 2.0)));
}

TEST_CASE("json rendering") {
    ApResult r;
    r.ap = 0.25;
    r.ap50 = 0.5;
    r.per_class = {0.1, std::numeric_limits<double>::quiet_NaN(), 0.4};
    const auto j = ap_to_json(r);
    CHECK(j["AP"] == 0.25);
    CHECK(j["AP50"] == 0.5);
    CHECK(j["per_class"][1].is_null());
}
