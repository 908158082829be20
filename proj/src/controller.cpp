#include "dgseg/controller.hpp"

#include <cmath>
#include <stdexcept>

namespace dgseg {

ControllerState ControllerState::fresh(int num_classes, double momentum, double lambda_max) {
    ControllerState s;
    s.num_classes = num_classes;
    s.mu_t = 1.0 / num_classes;
    s.sigma2_t = 1.0;
    s.momentum = momentum;
    s.lambda_max = lambda_max;
    s.initialized = false;
    return s;
}

nlohmann::json controller_to_json(const ControllerState& s) {
    return {{"mu_t", s.mu_t},           {"sigma2_t", s.sigma2_t},       {"momentum", s.momentum},
            {"lambda_max", s.lambda_max}, {"num_classes", s.num_classes}, {"initialized", s.initialized}};
}

ControllerState controller_from_json(const nlohmann::json& j) {
    ControllerState s;
    s.mu_t = j.at("mu_t").get<double>();
    s.sigma2_t = j.at("sigma2_t").get<double>();
    s.momentum = j.at("momentum").get<double>();
    s.lambda_max = j.at("lambda_max").get<double>();
    s.num_classes = j.at("num_classes").get<int>();
    s.initialized = j.value("initialized", false);
    return s;
}

std::pair<double, double> batch_stats(std::span<const double> conf) {
    if (conf.empty()) throw std::invalid_argument("batch_stats: empty confidence batch");
    double mean = 0.0;
    for (double c : conf) mean += c;
    mean /= static_cast<double>(conf.size());
    double var = 0.0;
    for (double c : conf) var += (c - mean) * (c - mean);
    var /= static_cast<double>(conf.size());
    return {mean, var};
}

ControllerState update(const ControllerState& s, std::span<const double> conf) {
    if (conf.empty()) return s;
    const auto [mu_b, var_b] = batch_stats(conf);
    const double b = static_cast<double>(conf.size());
    const double unbiased = conf.size() > 1 ? var_b * b / (b - 1.0) : 0.0;
    ControllerState out = s;
    out.mu_t = s.momentum * s.mu_t + (1.0 - s.momentum) * mu_b;
    out.sigma2_t = s.momentum * s.sigma2_t + (1.0 - s.momentum) * unbiased;
    out.initialized = true;
    return out;
}

double gaussian_weight(const ControllerState& s, double conf) {
    if (conf >= s.mu_t) return s.lambda_max;
    if (s.sigma2_t < 1e-12) return 0.0;
    const double d = conf - s.mu_t;
    return s.lambda_max * std::exp(-(d * d) / (2.0 * s.sigma2_t));
}

double depth_weight(const ControllerState& s, std::span<const double> conf) {
    if (conf.empty()) return 0.0;
    double mean = 0.0;
    for (double c : conf) mean += gaussian_weight(s, c);
    mean /= static_cast<double>(conf.size());
    return s.mu_t > mean ? s.mu_t - mean : 0.0;
}

}  // namespace dgseg
