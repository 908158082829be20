#include "dgseg/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dgseg {

namespace {

void check_size(std::size_t a, const Mask& m, const char* what) {
    if (a != m.bits.size()) throw std::invalid_argument(std::string(what) + ": prediction and target shapes differ");
}

}  // namespace

double dice_loss(std::span<const double> probs, const Mask& target, std::span<double> grad) {
    check_size(probs.size(), target, "dice_loss");
    double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double y = target.bits[i];
        inter += probs[i] * y;
        sum_p += probs[i];
        sum_y += y;
    }
    const double num = 2.0 * inter + kDiceEps;
    const double den = sum_p + sum_y + kDiceEps;
    if (!grad.empty()) {
        check_size(grad.size(), target, "dice_loss");
        for (std::size_t i = 0; i < probs.size(); ++i) grad[i] = -(2.0 * target.bits[i] * den - num) / (den * den);
    }
    return 1.0 - num / den;
}

double mask_bce(std::span<const double> logits, const Mask& target, std::span<double> grad) {
    check_size(logits.size(), target, "mask_bce");
    const double inv = 1.0 / static_cast<double>(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) total += softplus(logits[i]) - logits[i] * target.bits[i];
    if (!grad.empty()) {
        check_size(grad.size(), target, "mask_bce");
        for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = (sigmoid(logits[i]) - target.bits[i]) * inv;
    }
    return total * inv;
}

double class_ce(std::span<const double> logits, int target, std::span<double> grad) {
    if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
        throw std::invalid_argument("class_ce: target index out of range");
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - m);
    const double lse = m + std::log(z);
    if (!grad.empty()) {
        for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = std::exp(logits[i] - lse);
        grad[static_cast<std::size_t>(target)] -= 1.0;
    }
    return lse - logits[static_cast<std::size_t>(target)];
}

RowMatrix build_cost_matrix(const PredictionSet& pred, const InstanceSet& targets, const Config& cfg) {
    if (targets.empty()) throw std::invalid_argument("build_cost_matrix: no targets to match");
    const auto N = pred.mask_logits.rows();
    const auto P = pred.mask_logits.cols();
    const auto n = static_cast<Eigen::Index>(targets.size());

    RowMatrix Y(n, P);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& m = targets.masks[static_cast<std::size_t>(k)];
        if (static_cast<Eigen::Index>(m.bits.size()) != P)
            throw std::invalid_argument("build_cost_matrix: target mask shape differs from prediction");
        for (Eigen::Index p = 0; p < P; ++p) Y(k, p) = m.bits[static_cast<std::size_t>(p)];
    }
    const RowMatrix& X = pred.mask_logits;
    const RowMatrix prob = X.unaryExpr([](double v) { return sigmoid(v); });
    const Eigen::VectorXd sp = X.unaryExpr([](double v) { return softplus(v); }).rowwise().sum();
    const RowMatrix xy = X * Y.transpose();
    const RowMatrix py = prob * Y.transpose();
    const Eigen::VectorXd sum_p = prob.rowwise().sum();
    const Eigen::VectorXd sum_y = Y.rowwise().sum();

    RowMatrix C(N, n);
    for (Eigen::Index q = 0; q < N; ++q) {
        const Eigen::VectorXd cls = softmax(pred.class_logits.row(q).transpose());
        for (Eigen::Index k = 0; k < n; ++k) {
            const double bce = (sp(q) - xy(q, k)) / static_cast<double>(P);
            const double dice = 1.0 - (2.0 * py(q, k) + kDiceEps) / (sum_p(q) + sum_y(k) + kDiceEps);
            const int c = targets.classes[static_cast<std::size_t>(k)];
            C(q, k) = -cfg.lambda_C * cls(c) + bce + cfg.lambda_D * dice;
        }
    }
    return C;
}

// ---------------------------------------------------------------------------
// Hungarian
// ---------------------------------------------------------------------------

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Kuhn-Munkres with potentials (O(r^2 c)) on the sub-matrix cost[rows, cols]
/// transposed so that targets are rows. Returns the optimal value and the
/// chosen query (position in `queries`) for every target.
double solve(const RowMatrix& cost, const std::vector<int>& targets, const std::vector<int>& queries,
             std::vector<int>* choice = nullptr) {
    const std::size_t n = targets.size();
    const std::size_t m = queries.size();
    if (n == 0) {
        if (choice) choice->clear();
        return 0.0;
    }
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    std::vector<char> used(m + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), kInf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(queries[j - 1], targets[i0 - 1]) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> target_to_query(n, -1);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) target_to_query[p[j] - 1] = static_cast<int>(j - 1);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost(queries[static_cast<std::size_t>(target_to_query[i])], targets[i]);
    if (choice) *choice = std::move(target_to_query);
    return total;
}

}  // namespace

Assignment hungarian(const RowMatrix& cost) {
    const int N = static_cast<int>(cost.rows());
    const int n = static_cast<int>(cost.cols());
    if (N < n) throw std::invalid_argument("hungarian: fewer queries than targets");
    if (!cost.allFinite()) throw std::invalid_argument("hungarian: cost matrix has non-finite entries");

    std::vector<int> targets(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) targets[static_cast<std::size_t>(k)] = k;
    std::vector<int> queries(static_cast<std::size_t>(N));
    for (int q = 0; q < N; ++q) queries[static_cast<std::size_t>(q)] = q;

    // Greedy lexicographic refinement: walk queries in order and give each the
    // smallest target that still admits an optimal completion.
    double remaining = solve(cost, targets, queries);
    const double tol = 1e-9 * (1.0 + cost.cwiseAbs().maxCoeff() * n);
    Assignment a;
    std::vector<int> rest_queries;
    for (int q = 0; q < N; ++q) {
        rest_queries.assign(queries.begin() + q + 1, queries.end());
        bool placed = false;
        if (!targets.empty()) {
            for (std::size_t t = 0; t < targets.size(); ++t) {
                std::vector<int> others = targets;
                others.erase(others.begin() + static_cast<std::ptrdiff_t>(t));
                if (others.size() > rest_queries.size()) continue;
                const double sub = solve(cost, others, rest_queries);
                if (cost(q, targets[t]) + sub <= remaining + tol) {
                    a.pairs.emplace_back(q, targets[t]);
                    targets = std::move(others);
                    remaining = sub;
                    placed = true;
                    break;
                }
            }
        }
        if (!placed) a.unmatched_queries.push_back(q);
    }
    return a;
}

double assignment_cost(const RowMatrix& cost, const Assignment& a) {
    std::vector<std::pair<int, int>> by_target;
    for (auto [q, t] : a.pairs) by_target.emplace_back(t, q);
    std::sort(by_target.begin(), by_target.end());
    double total = 0.0;
    for (auto [t, q] : by_target) total += cost(q, t);
    return total;
}

// ---------------------------------------------------------------------------
// Set losses
// ---------------------------------------------------------------------------

LossGrad image_loss_grad(const PredictionSet& pred, const InstanceSet& targets, const Config& cfg) {
    const int N = pred.num_queries();
    const int K = static_cast<int>(pred.class_logits.cols());
    const auto P = pred.mask_logits.cols();
    const int no_object = K - 1;
    LossGrad out;
    out.d_class_logits = RowMatrix::Zero(N, K);
    out.d_mask_logits = RowMatrix::Zero(N, P);

    if (targets.empty()) {
        for (int q = 0; q < N; ++q) out.assignment.unmatched_queries.push_back(q);
    } else {
        out.assignment = hungarian(build_cost_matrix(pred, targets, cfg));
    }

    const double n = static_cast<double>(targets.size());
    std::vector<double> g(static_cast<std::size_t>(P));
    std::vector<double> gd(static_cast<std::size_t>(P));
    std::vector<double> prob(static_cast<std::size_t>(P));
    std::vector<double> gc(static_cast<std::size_t>(K));
    double matched = 0.0;
    for (auto [q, k] : out.assignment.pairs) {
        const auto& y = targets.masks[static_cast<std::size_t>(k)];
        const std::span<const double> logits(pred.mask_logits.row(q).data(), static_cast<std::size_t>(P));
        for (Eigen::Index i = 0; i < P; ++i) prob[static_cast<std::size_t>(i)] = sigmoid(logits[static_cast<std::size_t>(i)]);
        const double bce = mask_bce(logits, y, g);
        const double dice = dice_loss(prob, y, gd);
        const double ce = class_ce({pred.class_logits.row(q).data(), static_cast<std::size_t>(K)},
                                   targets.classes[static_cast<std::size_t>(k)], gc);
        matched += bce + cfg.lambda_D * dice + cfg.lambda_C * ce;
        for (Eigen::Index i = 0; i < P; ++i) {
            const auto s = static_cast<std::size_t>(i);
            out.d_mask_logits(q, i) = (g[s] + cfg.lambda_D * gd[s] * prob[s] * (1.0 - prob[s])) / n;
        }
        for (int c = 0; c < K; ++c) out.d_class_logits(q, c) = cfg.lambda_C * gc[static_cast<std::size_t>(c)] / n;
    }
    double value = targets.empty() ? 0.0 : matched / n;

    const double w = kNoObjectWeight / N;
    for (int q : out.assignment.unmatched_queries) {
        value += w * class_ce({pred.class_logits.row(q).data(), static_cast<std::size_t>(K)}, no_object, gc);
        for (int c = 0; c < K; ++c) out.d_class_logits(q, c) += w * gc[static_cast<std::size_t>(c)];
    }
    out.value = value;
    return out;
}

double image_loss(const PredictionSet& pred, const InstanceSet& targets, const Config& cfg) {
    return image_loss_grad(pred, targets, cfg).value;
}

double batch_loss(const std::vector<std::pair<PredictionSet, InstanceSet>>& items, const Config& cfg) {
    if (items.empty()) return 0.0;
    double total = 0.0;
    for (const auto& [pred, targets] : items) total += image_loss(pred, targets, cfg);
    return total / static_cast<double>(items.size());
}

double effective_lambda_d(const Config& cfg, double lambda_d) { return cfg.components.ds ? lambda_d : 0.0; }

double unsup_loss(double loss_rgb, double loss_depth, const Config& cfg, double lambda_d) {
    const double ld = effective_lambda_d(cfg, lambda_d);
    return cfg.lambda_l * loss_rgb + (ld == 0.0 ? 0.0 : ld * loss_depth);
}

double semi_loss(double loss_l, double loss_u, const Config& cfg) { return cfg.lambda_l * loss_l + cfg.lambda_u * loss_u; }

}  // namespace dgseg
