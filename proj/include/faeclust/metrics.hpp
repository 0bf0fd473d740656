#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "faeclust/fdata.hpp"

namespace faeclust {

enum class Metric { l2, srv, dtw_fast, dtw_ultra };
Metric metric_from_string(const std::string& s);
std::string to_string(Metric m);

enum class DtwMode { exact, fast, ultra };

/**
 * Square-root velocity representation on a grid: column t maps to
 * y'(t) / sqrt(||y'(t)||) when the speed exceeds 1e-8, and to zero otherwise.
 * derivs holds the analytic derivative values, one column per grid point.
 */
Eigen::MatrixXd srv_transform(const Eigen::MatrixXd& derivs);

// SRV values of sample i on an N-point uniform grid over the basis domain.
Eigen::MatrixXd srv_on_grid(const FunctionalDataset& data, int i, int grid_n);

/**
 * Elastic (amplitude) distance: the minimum over monotone warps h of
 * || SRV(f o h) sqrt(h') - SRV(g) ||, found by dynamic programming on an
 * N x N grid. Candidate warp segments cover all coprime slope ratios up to
 * max_step (plus purely horizontal/vertical moves whose cost is the skipped
 * SRV energy), which keeps the slope quantization fine enough for the
 * reparameterization-invariance guarantees; the plain one-step L-shaped
 * neighborhood quantizes slopes too coarsely to approach invariance.
 * The DP is run in both argument orders and the smaller value returned,
 * making the result exactly symmetric.
 */
double elastic_distance(const FunctionalDataset& data, int i, int j, int grid_n,
                        int max_step = 10);

// Grid-level elastic distance between precomputed SRV matrices (p x N each)
// sampled uniformly on [a, b].
double elastic_distance_srv(const Eigen::MatrixXd& q1, const Eigen::MatrixXd& q2, double a,
                            double b, int max_step = 10);

/**
 * Dynamic time warping cost between two curves sampled on a shared N-point
 * grid (columns), with squared Euclidean step costs and no normalization.
 *   exact: full O(N^2) table (reference).
 *   fast:  multiresolution refinement; the window is the projection of the
 *          half-resolution path widened by `radius`.
 *   ultra: banded DP (half-width radius, or ceil(0.1 N) when radius <= 0)
 *          with cells pruned against the diagonal-alignment upper bound.
 * Both approximations search subsets of warping paths, so they bound the
 * exact cost from below by it and equal it when the window covers the table.
 */
double dtw_distance(const Eigen::MatrixXd& f, const Eigen::MatrixXd& g, DtwMode mode,
                    int radius = 2);

/**
 * Pairwise distances under one metric.
 *   l2        exact Hilbert distance from basis coefficients
 *   srv       elastic distance on an N-point grid
 *   dtw_fast  / dtw_ultra on an N-point grid
 * Rows are distributed over `threads` workers; every cell has one writer, so
 * the result is identical for any thread count.
 */
Eigen::MatrixXd distance_matrix(const FunctionalDataset& data, Metric metric, int grid_n,
                                int radius, int threads = 0);

enum class NeighborhoodStrategy { knee, connectivity };
NeighborhoodStrategy neighborhood_from_string(const std::string& s);

/**
 * Neighborhood size for the similarity graph.
 *   knee:         k at the maximum discrete curvature of the mean k-th
 *                 nearest-neighbor distance curve, k = 1..ceil(n/2)
 *   connectivity: smallest m whose union-kNN graph is connected
 * Falls back to ceil(log2 n) when the knee curve is flat.
 */
int select_neighborhood_size(const Eigen::MatrixXd& dist, NeighborhoodStrategy strategy);

struct SimilarityGraph {
  int n = 0;
  int m_nn = 0;
  std::vector<std::array<int, 2>> edges;  // {i, j} with i < j, sorted
  std::vector<double> weights;            // s_ij in (0, 1]

  std::vector<std::vector<std::pair<int, double>>> adjacency() const;
};

/**
 * Union-kNN similarity graph: an edge joins i and j when either is among the
 * other's m nearest neighbors (distance ties broken toward smaller index),
 * weighted by s_ij = exp(-d_ij / median(positive distances)). The median
 * rescaling keeps weights away from underflow on unstandardized scales and
 * preserves the ordering; raw exp(-d_ij) is available via median_scale=false.
 */
SimilarityGraph build_similarity_graph(const Eigen::MatrixXd& dist, int m,
                                       bool median_scale = true);

// The m nearest neighbors of each point, ties toward the smaller index.
std::vector<std::vector<int>> knn_lists(const Eigen::MatrixXd& dist, int m);

}  // namespace faeclust
