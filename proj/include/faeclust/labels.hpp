#pragma once

#include <vector>

namespace faeclust {

/**
 * Adjusted Rand index from pair counts: (RI - E[RI]) / (max RI - E[RI]) with
 * the expectation under the permutation model. Identical partitions score 1,
 * including the degenerate single-cluster and all-singleton cases where the
 * correction denominator vanishes.
 */
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

/**
 * Adjusted mutual information: (MI - E[MI]) / (max(H_a, H_b) - E[MI]) with the
 * exact expected mutual information under the hypergeometric (random
 * permutation) model, computed from log-factorials. Identical partitions give
 * 1; an exactly zero denominator with nonidentical partitions gives 0.
 */
double adjusted_mutual_info(const std::vector<int>& a, const std::vector<int>& b);

// Relabels clusters by order of first appearance, so partitions that differ
// only by cluster numbering compare equal position by position.
std::vector<int> canonical_labels(const std::vector<int>& labels);

// Fraction of positions whose canonical label changed between two partitions;
// used for convergence checks, not as a clustering score.
double label_change_fraction(const std::vector<int>& prev, const std::vector<int>& cur);

}  // namespace faeclust
