#pragma once

// Independent reference implementations used by the unit and acceptance tests.

#include <filesystem>
#include <functional>
#include <vector>

#include "dgseg/core.hpp"
#include "dgseg/objective.hpp"

namespace oracle {

using dgseg::InstanceSet;
using dgseg::Mask;
using dgseg::PredictionSet;
using dgseg::Rng;
using dgseg::RowMatrix;

/// Exhaustive search over injective target -> query maps. Returns the minimum
/// total (summed in target order) and the lexicographically smallest sorted
/// (query, target) list among the optimal maps.
struct BruteAssignment {
    double total = 0.0;
    std::vector<std::pair<int, int>> pairs;
};
BruteAssignment brute_force_assignment(const RowMatrix& cost);

/// Matching-enumeration AP. For each (class, threshold) every partial
/// one-to-one matching of detections to same-class ground truth with IoU >=
/// threshold is enumerated; among those with the most matches, the one whose
/// true-positive sequence in score order is lexicographically largest is used.
/// Precision at recall r is the maximum precision at any recall >= r.
struct BruteAp {
    std::vector<double> per_threshold;  // class mean per threshold
    double ap = 0.0;
    double ap50 = 0.0;
};
BruteAp brute_force_ap(const std::vector<InstanceSet>& preds, const std::vector<InstanceSet>& gts, int num_classes,
                       const std::vector<double>& thresholds);

/// Central difference (f(x+h) - f(x-h)) / 2h of f with respect to v[i].
double central_difference(std::vector<double>& v, std::size_t i, double h, const std::function<double()>& f);

/// max |a-b| / max(1e-8, |a|+|b|) over entries.
double max_rel_error(const std::vector<double>& a, const std::vector<double>& b);

// --- fixtures -------------------------------------------------------------------

Mask random_mask(Rng& rng, int h, int w, double p);
/// Non-empty axis-aligned rectangle mask.
Mask random_rect(Rng& rng, int h, int w);
/// Up to `n` pairwise-disjoint non-empty masks with random classes.
InstanceSet random_disjoint_instances(Rng& rng, int h, int w, int n, int num_classes);
PredictionSet random_prediction(Rng& rng, int n_queries, int num_classes, int h, int w, double scale = 2.0);

/// Fresh, empty scratch directory under $DGSEG_TEST_TMP (or the system temp dir).
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace oracle
