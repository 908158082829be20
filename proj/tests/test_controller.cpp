#include "doctest.h"
#include "dgseg/controller.hpp"
#include "oracles.hpp"

using namespace dgseg;

TEST_CASE("batch statistics") {
    const std::vector<double> two{0.5, 0.7};
    const auto [mu, var] = batch_stats(two);
    CHECK(mu == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(var == doctest::Approx(0.01).epsilon(1e-12));
    const std::vector<double> single{0.42};
    CHECK(batch_stats(single) == std::pair<double, double>{0.42, 0.0});
    const std::vector<double> flat(7, 0.3);
    CHECK(batch_stats(flat).second == doctest::Approx(0.0));
    CHECK_THROWS_AS(batch_stats(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("fresh state and the first update") {
    const ControllerState s = ControllerState::fresh(3, 0.999, 1.0);
    CHECK(s.mu_t == 1.0 / 3.0);
    CHECK(s.sigma2_t == 1.0);
    const std::vector<double> batch{0.5, 0.7};
    const ControllerState u = update(s, batch);
    CHECK(u.mu_t == doctest::Approx(0.999 / 3.0 + 0.001 * 0.6).epsilon(1e-15));
    CHECK(u.mu_t == doctest::Approx(0.33360).epsilon(1e-5));
    // The batch variance enters Bessel-corrected: 0.01 * 2 / 1.
    CHECK(u.sigma2_t == doctest::Approx(0.999 + 0.001 * 0.02).epsilon(1e-14));
    CHECK(update(s, std::vector<double>{}) == s);
    CHECK(update(s, std::vector<double>{0.9}).sigma2_t == doctest::Approx(0.999));
}

TEST_CASE("unit momentum freezes the statistics") {
    ControllerState s = ControllerState::fresh(3, 1.0, 1.0);
    const ControllerState u = update(s, std::vector<double>{0.9, 0.1});
    CHECK(u.mu_t == s.mu_t);
    CHECK(u.sigma2_t == s.sigma2_t);
}

TEST_CASE("constant batches pull the mean geometrically") {
    ControllerState s = ControllerState::fresh(3, 0.9, 1.0);
    const double x = 0.8;
    const std::vector<double> batch{x, x};
    for (int k = 1; k <= 50; ++k) {
        s = update(s, batch);
        CHECK(s.mu_t - x == doctest::Approx(std::pow(0.9, k) * (1.0 / 3.0 - x)).epsilon(1e-10));
        CHECK(s.sigma2_t == doctest::Approx(std::pow(0.9, k)).epsilon(1e-10));
    }
}

TEST_CASE("gaussian weight branches") {
    ControllerState s = ControllerState::fresh(3, 0.999, 2.0);
    s.mu_t = 0.6;
    s.sigma2_t = 0.04;
    CHECK(gaussian_weight(s, 0.6) == 2.0);
    CHECK(gaussian_weight(s, 0.8) == 2.0);
    CHECK(gaussian_weight(s, 0.6 - 0.2) == doctest::Approx(2.0 * std::exp(-0.5)).epsilon(1e-14));
    s.sigma2_t = 1e-13;
    CHECK(gaussian_weight(s, 0.59) == 0.0);
    CHECK(gaussian_weight(s, 0.61) == 2.0);
}

TEST_CASE("depth weight examples") {
    ControllerState s = ControllerState::fresh(3, 0.999, 1.0);
    s.mu_t = 0.6;
    s.sigma2_t = 0.001;
    // A batch whose mean weight is 0.2: one confidence at the mean gives 1,
    // four far below give ~0.
    const std::vector<double> conf{0.6, 0.0, 0.0, 0.0, 0.0};
    CHECK(depth_weight(s, conf) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(depth_weight(s, std::vector<double>{0.7, 0.9}) == 0.0);
    CHECK(depth_weight(s, std::vector<double>{}) == 0.0);
    // Very unconfident batches drive the weight up to mu.
    CHECK(depth_weight(s, std::vector<double>{0.0, 0.0}) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("random states respect the bounds") {
    Rng rng(1);
    for (int t = 0; t < 2000; ++t) {
        ControllerState s = ControllerState::fresh(rng.uniform_int(1, 5), rng.uniform(0.5, 0.9999), rng.uniform(0.1, 3));
        s.mu_t = rng.uniform();
        s.sigma2_t = rng.bernoulli(0.1) ? 0.0 : rng.uniform(0.0, 0.5);
        std::vector<double> conf(static_cast<std::size_t>(rng.uniform_int(1, 8)));
        for (auto& c : conf) c = rng.uniform();
        for (double c : conf) {
            const double w = gaussian_weight(s, c);
            CHECK(w >= 0.0);
            CHECK(w <= s.lambda_max);
        }
        const double d = depth_weight(s, conf);
        CHECK(d >= 0.0);
        CHECK(d <= s.mu_t);
    }
}

TEST_CASE("controller state serializes") {
    ControllerState s = ControllerState::fresh(4, 0.99, 1.5);
    s = update(s, std::vector<double>{0.2, 0.9, 0.4});
    CHECK(controller_from_json(controller_to_json(s)) == s);
    CHECK(ControllerState::fresh(Config{}).mu_t == 1.0 / 3.0);
}
