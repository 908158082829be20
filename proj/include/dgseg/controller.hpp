#pragma once

#include <span>
#include <utility>

#include "dgseg/core.hpp"

namespace dgseg {

/// Running statistics of teacher confidences that drive the depth-loss weight.
struct ControllerState {
    double mu_t = 0.0;
    double sigma2_t = 1.0;
    double momentum = 0.999;
    double lambda_max = 1.0;
    int num_classes = 3;
    bool initialized = false;

    /// Fresh state: mu = 1/c, sigma^2 = 1.
    static ControllerState fresh(int num_classes, double momentum, double lambda_max);
    static ControllerState fresh(const Config& cfg) {
        return fresh(cfg.num_classes, cfg.stats_momentum, cfg.lambda_max);
    }

    bool operator==(const ControllerState&) const = default;
};

nlohmann::json controller_to_json(const ControllerState& s);
ControllerState controller_from_json(const nlohmann::json& j);

/// Mean and population variance (divide by B) of a batch of confidences.
/// Throws std::invalid_argument on an empty batch.
std::pair<double, double> batch_stats(std::span<const double> confidences);

/// EMA update of (mu, sigma^2). The batch variance enters Bessel-corrected
/// (x B/(B-1)); a single-sample batch contributes zero variance. An empty
/// batch leaves the state unchanged.
ControllerState update(const ControllerState& s, std::span<const double> confidences);

/// Truncated Gaussian weight: lambda_max when conf >= mu, otherwise
/// lambda_max * exp(-(conf - mu)^2 / (2 sigma^2)). With sigma^2 < 1e-12 the
/// lower branch collapses to 0.
double gaussian_weight(const ControllerState& s, double conf);

/// max(0, mu - mean_i gaussian_weight(conf_i)); 0 for an empty batch.
double depth_weight(const ControllerState& s, std::span<const double> confidences);

}  // namespace dgseg
