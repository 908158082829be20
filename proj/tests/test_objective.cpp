#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "dgseg/objective.hpp"
#include "oracles.hpp"

using namespace dgseg;

namespace {

Mask full_mask(int h, int w, std::uint8_t v) {
    Mask m(h, w);
    std::fill(m.bits.begin(), m.bits.end(), v);
    return m;
}

InstanceSet instances(const std::vector<Mask>& masks, const std::vector<int>& classes) {
    InstanceSet s;
    s.height = masks.empty() ? 4 : masks[0].height;
    s.width = masks.empty() ? 4 : masks[0].width;
    s.masks = masks;
    s.classes = classes;
    return s;
}

std::vector<double> row(const RowMatrix& m, Eigen::Index r) {
    return {m.row(r).data(), m.row(r).data() + m.cols()};
}

}  // namespace

TEST_CASE("dice loss examples") {
    const Mask ones = full_mask(2, 2, 1);
    const std::vector<double> p1(4, 1.0), p0(4, 0.0);
    CHECK(dice_loss(p1, ones) == 0.0);
    CHECK(dice_loss(p0, ones) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(dice_loss(p0, full_mask(2, 2, 0)) == 0.0);
    CHECK_THROWS_AS(dice_loss(std::vector<double>(3, 0.5), ones), std::invalid_argument);
}

TEST_CASE("mask BCE examples") {
    Rng rng(1);
    const Mask y = oracle::random_mask(rng, 3, 3, 0.5);
    CHECK(mask_bce(std::vector<double>(9, 0.0), y) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    std::vector<double> sat(9);
    for (std::size_t i = 0; i < 9; ++i) sat[i] = y.bits[i] ? 20.0 : -20.0;
    CHECK(mask_bce(sat, y) < 1e-8);

    // Naive formula with clamped probabilities.
    for (int t = 0; t < 20; ++t) {
        const Mask m = oracle::random_mask(rng, 3, 3, 0.5);
        std::vector<double> l(9);
        for (auto& v : l) v = rng.normal(0.0, 3.0);
        double naive = 0.0;
        for (std::size_t i = 0; i < 9; ++i) {
            const double p = std::clamp(1.0 / (1.0 + std::exp(-l[i])), 1e-15, 1.0 - 1e-15);
            naive -= m.bits[i] ? std::log(p) : std::log(1.0 - p);
        }
        CHECK(std::abs(mask_bce(l, m) - naive / 9.0) < 1e-12);
    }
    CHECK(std::isfinite(mask_bce(std::vector<double>(9, 1000.0), full_mask(3, 3, 0))));
}

TEST_CASE("class cross-entropy examples") {
    CHECK(class_ce(std::vector<double>(4, 0.3), 2) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(class_ce(std::vector<double>{0, 0, 20, 0}, 2) < 1e-8);
    CHECK_THROWS_AS(class_ce(std::vector<double>(4, 0.0), 4), std::invalid_argument);
    CHECK_THROWS_AS(class_ce(std::vector<double>(4, 0.0), -1), std::invalid_argument);
}

TEST_CASE("elementary loss gradients match central differences") {
    Rng rng(2);
    const double h = 1e-5;
    for (int t = 0; t < 10; ++t) {
        const Mask y = oracle::random_mask(rng, 8, 8, 0.4);
        std::vector<double> logits(64), probs(64), g(64);
        for (auto& v : logits) v = rng.normal(0.0, 2.0);
        for (auto& v : probs) v = rng.uniform(0.01, 0.99);

        mask_bce(logits, y, g);
        std::vector<double> num(64);
        for (std::size_t i = 0; i < 64; ++i)
            num[i] = oracle::central_difference(logits, i, h, [&] { return mask_bce(logits, y); });
        CHECK(oracle::max_rel_error(g, num) < 1e-3);

        dice_loss(probs, y, g);
        for (std::size_t i = 0; i < 64; ++i)
            num[i] = oracle::central_difference(probs, i, h, [&] { return dice_loss(probs, y); });
        CHECK(oracle::max_rel_error(g, num) < 1e-3);

        std::vector<double> cl(4), gc(4), nc(4);
        for (auto& v : cl) v = rng.normal(0.0, 2.0);
        const int target = rng.uniform_int(0, 3);
        class_ce(cl, target, gc);
        for (std::size_t i = 0; i < 4; ++i)
            nc[i] = oracle::central_difference(cl, i, h, [&] { return class_ce(cl, target); });
        CHECK(oracle::max_rel_error(gc, nc) < 1e-3);
    }
}

TEST_CASE("cost matrix entries match the three loss terms") {
    Rng rng(3);
    Config cfg;
    for (int t = 0; t < 5; ++t) {
        const PredictionSet pred = oracle::random_prediction(rng, 3, 3, 5, 5);
        const InstanceSet tg = instances({oracle::random_rect(rng, 5, 5), oracle::random_rect(rng, 5, 5)},
                                         {rng.uniform_int(0, 2), rng.uniform_int(0, 2)});
        const RowMatrix C = build_cost_matrix(pred, tg, cfg);
        REQUIRE(C.rows() == 3);
        REQUIRE(C.cols() == 2);
        for (int q = 0; q < 3; ++q)
            for (int k = 0; k < 2; ++k) {
                const auto logits = row(pred.mask_logits, q);
                std::vector<double> probs(logits.size());
                for (std::size_t i = 0; i < logits.size(); ++i) probs[i] = 1.0 / (1.0 + std::exp(-logits[i]));
                const auto cl = row(pred.class_logits, q);
                double z = 0.0;
                for (double v : cl) z += std::exp(v);
                const double pc = std::exp(cl[static_cast<std::size_t>(tg.classes[static_cast<std::size_t>(k)])]) / z;
                const double expect = -cfg.lambda_C * pc + mask_bce(logits, tg.masks[static_cast<std::size_t>(k)]) +
                                      cfg.lambda_D * dice_loss(probs, tg.masks[static_cast<std::size_t>(k)]);
                CHECK(C(q, k) == doctest::Approx(expect).epsilon(1e-12));
            }
    }
    CHECK_THROWS_AS(build_cost_matrix(oracle::random_prediction(rng, 3, 3, 5, 5), InstanceSet{}, cfg),
                    std::invalid_argument);
}

TEST_CASE("a saturated exact prediction costs about -1") {
    Config cfg;
    Rng rng(4);
    const Mask y = oracle::random_rect(rng, 6, 6);
    PredictionSet pred;
    pred.height = pred.width = 6;
    pred.class_logits = RowMatrix::Constant(1, 4, -30.0);
    pred.class_logits(0, 1) = 30.0;
    pred.mask_logits = RowMatrix(1, 36);
    for (int i = 0; i < 36; ++i) pred.mask_logits(0, i) = y.bits[static_cast<std::size_t>(i)] ? 40.0 : -40.0;
    const RowMatrix C = build_cost_matrix(pred, instances({y}, {1}), cfg);
    CHECK(C(0, 0) <= -1.0 + 1e-8);
    CHECK(image_loss(pred, instances({y}, {1}), cfg) < 0.01);
}

TEST_CASE("hungarian examples") {
    RowMatrix c(2, 2);
    c << 1, 2, 3, 0;
    const Assignment a = hungarian(c);
    CHECK(a.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
    CHECK(assignment_cost(c, a) == 1.0);
    CHECK(a.unmatched_queries.empty());

    RowMatrix one(1, 1);
    one << 5.0;
    CHECK(hungarian(one).pairs == std::vector<std::pair<int, int>>{{0, 0}});

    const RowMatrix eq = RowMatrix::Constant(4, 3, 2.0);
    const Assignment e = hungarian(eq);
    CHECK(e.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}});
    CHECK(e.unmatched_queries == std::vector<int>{3});

    CHECK_THROWS_AS(hungarian(RowMatrix::Zero(1, 2)), std::invalid_argument);
    RowMatrix bad = RowMatrix::Zero(2, 2);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(hungarian(bad), std::invalid_argument);
}

TEST_CASE("hungarian agrees with exhaustive search") {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        const int n = rng.uniform_int(1, 5);
        const int N = rng.uniform_int(n, 6);
        RowMatrix c(N, n);
        // Integer costs create many ties, exercising the tie-break.
        const bool ties = t % 2 == 0;
        for (Eigen::Index i = 0; i < c.size(); ++i)
            c.data()[i] = ties ? static_cast<double>(rng.uniform_int(0, 3)) : rng.normal();
        const Assignment a = hungarian(c);
        const auto brute = oracle::brute_force_assignment(c);
        CHECK(assignment_cost(c, a) == brute.total);
        CHECK(a.pairs == brute.pairs);
        CHECK(static_cast<int>(a.pairs.size() + a.unmatched_queries.size()) == N);
    }
}

TEST_CASE("empty targets leave only the no-object term") {
    Config cfg;
    PredictionSet pred;
    pred.height = pred.width = 4;
    pred.class_logits = RowMatrix::Zero(20, 4);
    pred.mask_logits = RowMatrix::Zero(20, 16);
    InstanceSet none;
    none.height = none.width = 4;
    CHECK(image_loss(pred, none, cfg) == doctest::Approx(0.1 * std::log(4.0)).epsilon(1e-14));
    const LossGrad lg = image_loss_grad(pred, none, cfg);
    CHECK(lg.d_mask_logits.isZero());
    CHECK(lg.assignment.unmatched_queries.size() == 20);
}

TEST_CASE("image loss is invariant to query order and target order") {
    Config cfg;
    Rng rng(6);
    const PredictionSet pred = oracle::random_prediction(rng, 5, 3, 6, 6);
    const InstanceSet tg = oracle::random_disjoint_instances(rng, 6, 6, 3, 3);
    const double base = image_loss(pred, tg, cfg);

    PredictionSet perm = pred;
    const std::vector<int> order{2, 4, 0, 3, 1};
    for (int i = 0; i < 5; ++i) {
        perm.class_logits.row(i) = pred.class_logits.row(order[static_cast<std::size_t>(i)]);
        perm.mask_logits.row(i) = pred.mask_logits.row(order[static_cast<std::size_t>(i)]);
    }
    CHECK(image_loss(perm, tg, cfg) == doctest::Approx(base).epsilon(1e-12));

    InstanceSet rev = tg;
    std::reverse(rev.masks.begin(), rev.masks.end());
    std::reverse(rev.classes.begin(), rev.classes.end());
    CHECK(image_loss(pred, rev, cfg) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("image loss decomposes into matched and no-object parts") {
    Config cfg;
    Rng rng(7);
    const PredictionSet pred = oracle::random_prediction(rng, 4, 3, 5, 5);
    const InstanceSet tg = oracle::random_disjoint_instances(rng, 5, 5, 2, 3);
    const LossGrad lg = image_loss_grad(pred, tg, cfg);
    double expect = 0.0;
    for (auto [q, k] : lg.assignment.pairs) {
        const auto logits = row(pred.mask_logits, q);
        std::vector<double> probs(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) probs[i] = sigmoid(logits[i]);
        expect += mask_bce(logits, tg.masks[static_cast<std::size_t>(k)]) +
                  cfg.lambda_D * dice_loss(probs, tg.masks[static_cast<std::size_t>(k)]) +
                  cfg.lambda_C * class_ce(row(pred.class_logits, q), tg.classes[static_cast<std::size_t>(k)]);
    }
    expect /= static_cast<double>(tg.size());
    for (int q : lg.assignment.unmatched_queries) expect += 0.1 / 4.0 * class_ce(row(pred.class_logits, q), 3);
    CHECK(lg.value == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("image loss gradient matches central differences") {
    Config cfg;
    Rng rng(8);
    for (int t = 0; t < 5; ++t) {
        PredictionSet pred = oracle::random_prediction(rng, 5, 3, 8, 8, 1.5);
        const InstanceSet tg = oracle::random_disjoint_instances(rng, 8, 8, 3, 3);
        const LossGrad lg = image_loss_grad(pred, tg, cfg);
        std::vector<double> an, nu;
        for (int s = 0; s < 40; ++s) {
            const bool cls = s % 4 == 0;
            RowMatrix& target = cls ? pred.class_logits : pred.mask_logits;
            const auto idx = static_cast<Eigen::Index>(rng.uniform_int(0, static_cast<int>(target.size()) - 1));
            const double x = target.data()[idx];
            target.data()[idx] = x + 1e-5;
            const double fp = image_loss(pred, tg, cfg);
            target.data()[idx] = x - 1e-5;
            const double fm = image_loss(pred, tg, cfg);
            target.data()[idx] = x;
            nu.push_back((fp - fm) / 2e-5);
            an.push_back((cls ? lg.d_class_logits : lg.d_mask_logits).data()[idx]);
        }
        CHECK(oracle::max_rel_error(an, nu) < 1e-3);
    }
}

TEST_CASE("batch loss is the mean of image losses") {
    Config cfg;
    Rng rng(9);
    const PredictionSet a = oracle::random_prediction(rng, 4, 3, 5, 5);
    const PredictionSet b = oracle::random_prediction(rng, 4, 3, 5, 5);
    const InstanceSet ta = oracle::random_disjoint_instances(rng, 5, 5, 2, 3);
    const InstanceSet tb = oracle::random_disjoint_instances(rng, 5, 5, 1, 3);
    const double la = image_loss(a, ta, cfg), lb = image_loss(b, tb, cfg);
    CHECK(batch_loss({{a, ta}, {a, ta}, {a, ta}}, cfg) == doctest::Approx(la).epsilon(1e-14));
    CHECK(batch_loss({{a, ta}, {b, tb}}, cfg) == doctest::Approx(0.5 * (la + lb)).epsilon(1e-14));
}

TEST_CASE("unsupervised and semi-supervised combinations") {
    Config cfg;
    CHECK(unsup_loss(2.0, 4.0, cfg, 0.0) == 2.0);
    CHECK(unsup_loss(2.0, 4.0, cfg, 0.5) == 4.0);
    Config off = cfg;
    off.components.ds = false;
    CHECK(unsup_loss(2.0, 4.0, off, 0.5) == 2.0);
    CHECK(unsup_loss(2.0, 1e9, off, 0.5) == 2.0);
    CHECK(effective_lambda_d(off, 0.7) == 0.0);
    CHECK(effective_lambda_d(cfg, 0.7) == 0.7);

    CHECK(semi_loss(1.0, 0.5, cfg) == 2.0);
    Config sup = cfg;
    sup.lambda_u = 0.0;
    CHECK(semi_loss(1.0, 123.0, sup) == 1.0);
}
