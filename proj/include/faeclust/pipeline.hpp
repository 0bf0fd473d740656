#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "faeclust/cvxclust.hpp"
#include "faeclust/fdata.hpp"
#include "faeclust/metrics.hpp"
#include "faeclust/network.hpp"

namespace faeclust {

// Neighborhood size rule for the similarity graph. The curvature and
// connectivity strategies adapt to the distance scale but bridge distant
// clusters on strongly separated data, driving m (and the impure-edge count)
// up; the ceil(log2 n) rule keeps the graph sparse, which convex clustering
// prefers: components that never merge are still valid cuts.
enum class NeighborhoodRule { log2, knee, connectivity };
NeighborhoodRule neighborhood_rule_from_string(const std::string& s);
std::string to_string(NeighborhoodRule r);
int neighborhood_size(const Eigen::MatrixXd& dist, NeighborhoodRule rule);

struct FitConfig {
  NetConfig net;

  int pretrain_epochs = 80;
  // Training epochs per loop iteration; 0 keeps the pretrained network fixed.
  int finetune_epochs = 5;
  // Loops between cluster updates; 1 refreshes every loop, 0 means the
  // initial clustering is never refreshed.
  int cluster_refresh_period = 1;

  // Similarity graph construction (computed once, on the functional inputs).
  Metric metric = Metric::dtw_fast;
  int grid_n = 64;
  int dtw_radius = 4;
  NeighborhoodRule neighborhood = NeighborhoodRule::log2;
  int m_nn = 0;          // 0 selects automatically via the rule above
  bool raw_exp = false;  // exp(-d) instead of exp(-d / median)

  // Partition selection range; k_fixed > 0 bypasses the selection.
  int k_min = 2;
  int k_max = 10;
  int k_fixed = 0;

  std::uint64_t seed = 1;
  // Converged when the label-change fraction stays below this tolerance,
  // without increasing, over two consecutive cluster refreshes.
  double label_change_tol = 0.01;
  int max_loops = 20;

  int threads = 0;  // 0 defers to FAECLUST_THREADS, then 1
};

// One forward-embedding / cluster-update / finetune iteration, evaluated on
// the full dataset in eval mode at refresh time.
struct LoopRecord {
  double recon = 0.0;           // mean squared Hilbert reconstruction error
  double weight_penalty = 0.0;  // orthogonality + l1 roughness, unweighted
  double clustering = 0.0;      // cluster-tightness loss at current labels
  double fusion = 0.0;          // convex-clustering objective at selected cut
  int k = 0;
  double label_change = 0.0;  // vs previous refresh; 1.0 on the first
};

struct FitReport {
  std::vector<LoopRecord> loops;  // one record per executed loop
  std::vector<int> labels;        // final partition, canonical numbering
  Eigen::MatrixXd embedding;      // s x n, final eval-mode embedding
  int k = 0;
  int m_nn = 0;  // neighborhood size used for the similarity graph
  bool converged = false;

  // Wall times per phase, seconds. Deliberately kept out of report_json so
  // reports from identical runs compare byte for byte.
  double graph_seconds = 0.0;
  double pretrain_seconds = 0.0;
  double embed_seconds = 0.0;
  double cluster_seconds = 0.0;
  double finetune_seconds = 0.0;
};

struct FitResult {
  FaeNetwork net;
  ClusterResult clusters;
  FitReport report;
};

/**
 * Cuts the hierarchy at each K in [k_min, k_max] and keeps the most
 * persistent partition: the one that survives the widest relative lambda
 * interval of the fusion path (ratio of the breakpoint that destroys the cut
 * to the one that creates it). The coarsest cut is never destroyed, so
 * similarity-graph components have infinite persistence and win whenever they
 * fall inside the range. Ties go to the smaller K, and a positive k_fixed
 * bypasses the selection. The embedding only feeds the reported per-K
 * diagnostic scores: score-based selection (silhouette or Davies-Bouldin, in
 * either the input or the embedding space) measurably fragments elongated
 * clusters, while persistence tracks the merge structure itself and is
 * invariant to the scale of the centroid coordinates. When no cut falls
 * inside the range, the coarsest realizable partition is used and a warning
 * printed.
 */
ClusterResult select_persistent_partition(const MergeHierarchy& h, const Eigen::MatrixXd& z,
                                          int k_min, int k_max, int k_fixed = 0);

/**
 * Full training pipeline: similarity graph once on the functional data, then
 * reconstruction-only pretraining, then alternating loops of {eval-mode
 * embedding, per-dimension homotopy + joint cut selection, finetuning with
 * the clustering term active against the frozen partition}. Stops when the
 * label-change fraction stays below the tolerance for two consecutive
 * refreshes without increasing, or after max_loops; hitting the budget is
 * reported via report.converged, not an error. The clustering result of the
 * last executed refresh is final. An optional initial partition seeds the
 * clustering term for the very first loop only.
 */
FitResult fit(const FunctionalDataset& data, const FitConfig& cfg,
              const std::vector<int>& initial_labels = {});

}  // namespace faeclust
