#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dgseg/core.hpp"

namespace dgseg {

/// Matching between query rows and target columns of a cost matrix.
struct Assignment {
    std::vector<std::pair<int, int>> pairs;  // (query, target), ascending query
    std::vector<int> unmatched_queries;      // ascending
};

inline constexpr double kDiceEps = 1.0;
inline constexpr double kNoObjectWeight = 0.1;

/// 1 - (2 sum(p y) + eps) / (sum p + sum y + eps). When `grad` is non-empty it
/// receives d loss / d p.
double dice_loss(std::span<const double> probs, const Mask& target, std::span<double> grad = {});

/// Mean binary cross-entropy over pixels, in the stable softplus form. When
/// `grad` is non-empty it receives d loss / d logit.
double mask_bce(std::span<const double> logits, const Mask& target, std::span<double> grad = {});

/// -log softmax(logits)[target]. When `grad` is non-empty it receives d loss / d logits.
double class_ce(std::span<const double> logits, int target, std::span<double> grad = {});

/// C[q,k] = -lambda_C softmax(class_q)[c_k] + bce(mask_q, y_k) + lambda_D dice(sigmoid(mask_q), y_k).
/// Throws std::invalid_argument when `targets` is empty.
RowMatrix build_cost_matrix(const PredictionSet& pred, const InstanceSet& targets, const Config& cfg);

/// Minimum-cost assignment of every column (target) to a distinct row (query).
/// Among optimal assignments the lexicographically smallest (query, target)
/// pair list is returned. Throws std::invalid_argument when rows < cols or an
/// entry is not finite.
Assignment hungarian(const RowMatrix& cost);

/// Sum of cost[q, t] over pairs, accumulated in ascending target order.
double assignment_cost(const RowMatrix& cost, const Assignment& a);

struct LossGrad {
    double value = 0.0;
    RowMatrix d_class_logits;
    RowMatrix d_mask_logits;
    Assignment assignment;
};

/// Per-image set loss: matched mask BCE + lambda_D dice + lambda_C class CE,
/// averaged over targets, plus 0.1 x no-object CE averaged over all N queries
/// (counting only unmatched ones).
double image_loss(const PredictionSet& pred, const InstanceSet& targets, const Config& cfg);
/// image_loss together with its gradient with respect to the logits.
LossGrad image_loss_grad(const PredictionSet& pred, const InstanceSet& targets, const Config& cfg);

double batch_loss(const std::vector<std::pair<PredictionSet, InstanceSet>>& items, const Config& cfg);

/// lambda_l L_rgb + lambda_d L_depth; lambda_d is forced to 0 when DS is off.
double unsup_loss(double loss_rgb, double loss_depth, const Config& cfg, double lambda_d);
/// Effective depth weight after the DS switch.
double effective_lambda_d(const Config& cfg, double lambda_d);

/// lambda_l L_l + lambda_u L_u.
double semi_loss(double loss_l, double loss_u, const Config& cfg);

}  // namespace dgseg
