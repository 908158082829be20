#include "doctest.h"
#include "dgseg/datasynth.hpp"
#include "dgseg/pseudo.hpp"
#include "oracles.hpp"

using namespace dgseg;

namespace {

/// One query per row: class logits chosen so that softmax gives `probs`.
PredictionSet with_probs(const std::vector<std::vector<double>>& probs, const std::vector<Mask>& masks) {
    PredictionSet p;
    p.height = masks[0].height;
    p.width = masks[0].width;
    const auto N = static_cast<Eigen::Index>(probs.size());
    p.class_logits = RowMatrix(N, static_cast<Eigen::Index>(probs[0].size()));
    p.mask_logits = RowMatrix(N, static_cast<Eigen::Index>(masks[0].bits.size()));
    for (Eigen::Index q = 0; q < N; ++q) {
        for (std::size_t c = 0; c < probs[0].size(); ++c)
            p.class_logits(q, static_cast<Eigen::Index>(c)) = std::log(probs[static_cast<std::size_t>(q)][c]);
        const auto& m = masks[static_cast<std::size_t>(q)];
        for (std::size_t i = 0; i < m.bits.size(); ++i) p.mask_logits(q, static_cast<Eigen::Index>(i)) = m.bits[i] ? 8.0 : -8.0;
    }
    return p;
}

Mask block(int h, int w, int area) {
    Mask m(h, w);
    for (int i = 0; i < area; ++i) m.bits[static_cast<std::size_t>(i)] = 1;
    return m;
}

}  // namespace

TEST_CASE("confidence threshold") {
    const auto p = with_probs({{0.69, 0.11, 0.1, 0.1}, {0.1, 0.7, 0.1, 0.1}}, {block(4, 4, 8), block(4, 4, 8)});
    const InstanceSet s = extract(p, 0.7, 5);
    REQUIRE(s.size() == 1);
    CHECK(s.classes[0] == 1);
    CHECK((*s.scores)[0] == doctest::Approx(0.7));
}

TEST_CASE("area threshold") {
    const auto p = with_probs({{0.9, 0.05, 0.03, 0.02}, {0.9, 0.05, 0.03, 0.02}}, {block(4, 4, 4), block(4, 4, 5)});
    const InstanceSet s = extract(p, 0.7, 5);
    REQUIRE(s.size() == 1);
    CHECK(s.masks[0].area() == 5);
}

TEST_CASE("no-object queries are excluded before thresholding") {
    // Best real class 0.45 but the no-object class wins.
    const auto p = with_probs({{0.45, 0.0001, 0.0001, 0.5498}}, {block(4, 4, 8)});
    CHECK(extract(p, 0.4, 1).empty());
}

TEST_CASE("emitted instances satisfy the thresholds and are sorted") {
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        const PredictionSet p = oracle::random_prediction(rng, 10, 3, 6, 6, 3.0);
        const InstanceSet s = extract(p, 0.5, 3);
        REQUIRE(s.scores.has_value());
        for (std::size_t k = 0; k < s.size(); ++k) {
            CHECK((*s.scores)[k] >= 0.5);
            CHECK(s.masks[k].area() >= 3);
            for (auto b : s.masks[k].bits) CHECK(b <= 1);
            if (k > 0) CHECK((*s.scores)[k - 1] >= (*s.scores)[k]);
        }
        const InstanceSet again = extract(p, 0.5, 3);
        CHECK(again.masks == s.masks);
        CHECK(again.scores == s.scores);
    }
}

TEST_CASE("a saturated perfect teacher reproduces the ground truth") {
    Config cfg;
    Rng scene_rng(42);
    const Sample scene = generate_scene(scene_rng, 3, 64, 5);
    REQUIRE(scene.gt.size() == 3);
    PredictionSet p;
    p.height = p.width = 64;
    p.class_logits = RowMatrix::Constant(20, 4, -20.0);
    p.mask_logits = RowMatrix::Constant(20, 64 * 64, -20.0);
    for (int q = 0; q < 20; ++q) p.class_logits(q, 3) = 20.0;
    for (int k = 0; k < 3; ++k) {
        const int q = 4 * k + 1;
        p.class_logits(q, 3) = -20.0;
        p.class_logits(q, scene.gt.classes[static_cast<std::size_t>(k)]) = 20.0;
        for (std::size_t i = 0; i < scene.gt.masks[static_cast<std::size_t>(k)].bits.size(); ++i)
            if (scene.gt.masks[static_cast<std::size_t>(k)].bits[i]) p.mask_logits(q, static_cast<Eigen::Index>(i)) = 20.0;
    }
    const InstanceSet out = extract(p, cfg.alpha_C, cfg.alpha_S);
    REQUIRE(out.size() == 3);
    for (int k = 0; k < 3; ++k) {
        CHECK(out.masks[static_cast<std::size_t>(k)] == scene.gt.masks[static_cast<std::size_t>(k)]);
        CHECK(out.classes[static_cast<std::size_t>(k)] == scene.gt.classes[static_cast<std::size_t>(k)]);
    }
}

TEST_CASE("controller confidences come from the pseudo-instances") {
    // Query 0 prefers no-object and query 2 misses alpha_C; neither is a pseudo-instance.
    const auto p = with_probs({{0.2, 0.1, 0.1, 0.6}, {0.8, 0.1, 0.05, 0.05}, {0.1, 0.6, 0.2, 0.1}, {0.05, 0.05, 0.75, 0.15}},
                              {block(4, 4, 8), block(4, 4, 8), block(4, 4, 8), block(4, 4, 8)});
    const InstanceSet inst = extract(p, 0.7, 5);
    REQUIRE(inst.size() == 2);
    const auto top = top_confidences(inst, 1);
    REQUIRE(top.size() == 1);
    CHECK(top[0] == doctest::Approx(0.8));
    const auto all = top_confidences(inst, 5);
    REQUIRE(all.size() == 2);
    CHECK(all[1] == doctest::Approx(0.75));
    // No pseudo-instance: one zero confidence for the image.
    const auto none = top_confidences(extract(p, 0.95, 5), 1);
    REQUIRE(none.size() == 1);
    CHECK(none[0] == 0.0);
}

TEST_CASE("dual pseudo-labels") {
    Config cfg;
    cfg.canvas = 16;
    cfg.alpha_C = 0.0;
    cfg.alpha_S = 0;
    Rng init(4);
    ModelDims dims = ModelDims::from_config(cfg);
    const SegModel teacher(dims, init);
    const auto before = nn::hash_params(teacher.params());
    Rng rng(5);
    Image img(3, 16, 16);
    for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data.data()[i] = rng.uniform();

    const DualPseudo same = dual_pseudo(teacher, img, img, nullptr, cfg);
    CHECK(same.rgb.masks == same.depth.masks);
    CHECK(same.rgb.classes == same.depth.classes);
    CHECK(same.rgb.scores == same.depth.scores);
    CHECK(nn::hash_params(teacher.params()) == before);

    Config off = cfg;
    off.components.ds = false;
    const DualPseudo no_depth = dual_pseudo(teacher, img, img, nullptr, off);
    CHECK(no_depth.depth.empty());
    CHECK(no_depth.rgb.masks == same.rgb.masks);
}
