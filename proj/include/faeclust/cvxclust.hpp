#pragma once

#include <Eigen/Dense>
#include <limits>
#include <map>
#include <vector>

#include "faeclust/metrics.hpp"

namespace faeclust {

struct FistaResult {
  Eigen::VectorXd u;
  bool converged = false;
  int iterations = 0;
};

/**
 * Reference solver for the weighted one-dimensional fusion objective
 *
 *   min_u (1/n) ||x - u||^2 + lambda * sum_edges s_ij |u_i - u_j|
 *
 * via FISTA on the box-constrained dual: with D the signed edge-incidence
 * matrix, u(v) = x - (n/2) D^T v and the dual is minimized over |v_e| <=
 * lambda * s_e with gradient -D u(v) and Lipschitz constant (n/2)||D D^T||.
 * Stops when the primal-dual gap falls below tol * max(1, |objective|).
 */
FistaResult fista_fused(const Eigen::VectorXd& x, const SimilarityGraph& graph, double lambda,
                        double tol = 1e-10, int max_iter = 100000);

// Primal objective value of the fusion problem above.
double fusion_objective(const Eigen::VectorXd& x, const SimilarityGraph& graph, double lambda,
                        const Eigen::VectorXd& u);

struct MergeEvent {
  double lambda = 0.0;
  int a = -1, b = -1;  // merge-tree node ids consumed by the event
};

/**
 * Exact piecewise-linear solution path of the fusion objective in lambda.
 *
 * Every cluster k moves linearly, zeta_k(lambda) = u_k + slope_k (lambda -
 * birth), with slope -(n / (2 |I_k|)) * sum_v w_kv * sgn(u_k - u_v) over
 * graph-adjacent clusters v; two clusters merge where their lines intersect,
 * and the path continues with the fused cluster. Nodes form a binary merge
 * tree: leaves 0..n-1 are the subjects, internal nodes are fusions. A merge
 * of equal-valued neighbors leaves every other cluster's sign sum unchanged,
 * so slopes stay constant over each node's lifetime and candidate events
 * never need recomputation; stale heap entries are discarded lazily.
 */
struct CentroidPath {
  int n = 0;
  // Per merge-tree node (size n + #merges):
  std::vector<double> birth_lambda, birth_value, slope, death_lambda;
  std::vector<int> parent, left, right;
  std::vector<int> cluster_size;
  std::vector<MergeEvent> merges;  // chronological

  // Centroid of the cluster containing subject i at penalty level lambda.
  double value_at(int subject, double lambda) const;
  Eigen::VectorXd values_at(double lambda) const;
  // Smallest lambda at which subjects i and j share a cluster (inf if never).
  Eigen::MatrixXd cophenetic() const;
  // Number of distinct clusters at a given lambda.
  int cluster_count(double lambda) const;
};

CentroidPath homotopy_path(const Eigen::VectorXd& x, const SimilarityGraph& graph);

// Cross-checks a computed path against the FISTA oracle on a lambda grid
// spanning the merge range. Deviations above 1e-3 indicate the path missed a
// split and are counted so callers can surface them.
struct PathVerification {
  double max_deviation = 0.0;
  int suspected_splits = 0;
};
PathVerification verify_against_fista(const Eigen::VectorXd& x, const SimilarityGraph& graph,
                                      const CentroidPath& path, int n_lambdas = 25);

/**
 * Merge order across all latent dimensions: a pair of subjects fuses at the
 * largest of its per-dimension merge levels (they must share a centroid in
 * every coordinate), and the pairwise joint levels are closed into a
 * hierarchy by single linkage.
 */
struct MergeHierarchy {
  int n = 0;
  struct Step {
    double lambda;
    int a, b;  // smallest subject index of each merging cluster
  };
  std::vector<Step> steps;  // ascending lambda, at most n-1

  // Partition with K clusters (first n-K merges applied), canonical labels.
  std::vector<int> labels_at(int k) const;
  // Lambda at which the K-cluster partition becomes active (0 for K = n).
  double lambda_at(int k) const;
  int min_clusters() const { return n - static_cast<int>(steps.size()); }
};

MergeHierarchy joint_hierarchy(const std::vector<CentroidPath>& paths);

// Internal validation scores of one partition of the column-sample matrix X
// (s x n), Euclidean geometry.
struct PartitionScores {
  double silhouette = 0.0;
  double davies_bouldin = 0.0;
  double calinski_harabasz = 0.0;
};
PartitionScores partition_scores(const Eigen::MatrixXd& x, const std::vector<int>& labels);

double silhouette_score(const Eigen::MatrixXd& dist, const std::vector<int>& labels);

struct ClusterResult {
  std::vector<int> labels;
  int k = 0;
  std::map<int, PartitionScores> scores;  // per candidate K
};

/**
 * Cuts the hierarchy at each K in [k_min, k_max] and returns the partition
 * maximizing the silhouette score (ties to the smaller K); Davies-Bouldin and
 * Calinski-Harabasz are reported alongside. A positive k_fixed bypasses the
 * selection while still reporting scores. Cuts that the hierarchy cannot
 * realize (disconnected similarity graphs) are skipped.
 */
ClusterResult select_partition(const MergeHierarchy& h, const Eigen::MatrixXd& x, int k_min,
                               int k_max, int k_fixed = 0);

}  // namespace faeclust
