#include "faeclust/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "faeclust/errors.hpp"
#include "faeclust/labels.hpp"
#include "faeclust/threading.hpp"

namespace faeclust {

NeighborhoodRule neighborhood_rule_from_string(const std::string& s) {
  if (s == "log2") return NeighborhoodRule::log2;
  if (s == "knee") return NeighborhoodRule::knee;
  if (s == "connectivity") return NeighborhoodRule::connectivity;
  throw ConfigError("unknown neighborhood rule '" + s +
                    "' (expected log2, knee or connectivity)");
}

std::string to_string(NeighborhoodRule r) {
  switch (r) {
    case NeighborhoodRule::log2: return "log2";
    case NeighborhoodRule::knee: return "knee";
    default: return "connectivity";
  }
}

int neighborhood_size(const Eigen::MatrixXd& dist, NeighborhoodRule rule) {
  const int n = static_cast<int>(dist.rows());
  switch (rule) {
    case NeighborhoodRule::log2:
      return static_cast<int>(std::ceil(std::log2(std::max(2, n))));
    case NeighborhoodRule::knee:
      return select_neighborhood_size(dist, NeighborhoodStrategy::knee);
    default:
      return select_neighborhood_size(dist, NeighborhoodStrategy::connectivity);
  }
}

ClusterResult select_persistent_partition(const MergeHierarchy& h, const Eigen::MatrixXd& z,
                                          int k_min, int k_max, int k_fixed) {
  const int n = h.n;
  ClusterResult res;
  if (k_fixed > 0) {
    if (k_fixed < h.min_clusters() || k_fixed > n)
      throw DataError("fixed cluster count outside realizable range");
    res.k = k_fixed;
    res.labels = h.labels_at(k_fixed);
    if (k_fixed < n) res.scores[k_fixed] = partition_scores(z, res.labels);
    return res;
  }
  int lo = std::max({2, k_min, h.min_clusters()});
  int hi = std::min(k_max, n - 1);
  // Floor the creating breakpoint so near-duplicate subjects (which merge at
  // lambda close to 0) cannot make a fine cut look arbitrarily persistent.
  double lambda_floor = h.steps.empty() ? 1.0 : 1e-9 * h.steps.back().lambda;
  double best = -std::numeric_limits<double>::infinity();
  for (int k = lo; k <= hi; ++k) {
    double destroys = k > h.min_clusters() ? h.lambda_at(k - 1)
                                           : std::numeric_limits<double>::infinity();
    double persistence = destroys / std::max(h.lambda_at(k), lambda_floor);
    res.scores[k] = partition_scores(z, h.labels_at(k));
    if (persistence > best) {
      best = persistence;
      res.k = k;
    }
  }
  if (best < 0) {
    res.k = h.min_clusters();
    std::fprintf(stderr,
                 "warning: no cut in [%d, %d]; keeping the %d similarity-graph components\n",
                 k_min, k_max, res.k);
  }
  res.labels = h.labels_at(res.k);
  return res;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Epochs of mini-batch training with a divergence guard relative to the
// phase's first epoch.
void run_epochs(FaeNetwork& net, const FunctionalDataset& data, const std::vector<int>& labels,
                const LossWeights& weights, FaeGradients& momentum, std::mt19937_64& rng,
                int epochs, const char* phase) {
  double first = std::numeric_limits<double>::quiet_NaN();
  for (int e = 0; e < epochs; ++e) {
    double loss = train_epoch(net, data, labels, weights, momentum, rng);
    if (std::isnan(first)) first = loss;
    if (!std::isfinite(loss) || std::abs(loss) > 1e3 * std::max(std::abs(first), 1e-12))
      throw NumericError(std::string(phase) + " diverged at epoch " + std::to_string(e));
  }
}

}  // namespace

FitResult fit(const FunctionalDataset& data, const FitConfig& cfg,
              const std::vector<int>& initial_labels) {
  const int n = data.size();
  if (n < 3) throw DataError("fit needs at least 3 samples");
  if (!initial_labels.empty() && static_cast<int>(initial_labels.size()) != n)
    throw DataError("initial labels cover " + std::to_string(initial_labels.size()) +
                    " subjects, dataset has " + std::to_string(n));

  FitResult res;
  FitReport& report = res.report;

  // Similarity graph, once, on the functional inputs.
  Clock::time_point t0 = Clock::now();
  int threads = resolve_threads(cfg.threads);
  Eigen::MatrixXd dist = distance_matrix(data, cfg.metric, cfg.grid_n, cfg.dtw_radius, threads);
  int m = cfg.m_nn > 0 ? cfg.m_nn : neighborhood_size(dist, cfg.neighborhood);
  m = std::min(m, n - 1);
  SimilarityGraph graph = build_similarity_graph(dist, m, !cfg.raw_exp);
  report.m_nn = m;
  report.graph_seconds = seconds_since(t0);

  res.net = build_network(cfg.net, data.basis, data.dims());
  FaeNetwork& net = res.net;

  std::mt19937_64 rng(cfg.seed);
  FaeGradients momentum = zero_gradients(net);
  const LossWeights pretrain_w{cfg.net.lambda_w, 0.0};
  const LossWeights finetune_w{cfg.net.lambda_w, cfg.net.lambda_c};

  t0 = Clock::now();
  run_epochs(net, data, {}, pretrain_w, momentum, rng, cfg.pretrain_epochs, "pretraining");
  report.pretrain_seconds = seconds_since(t0);

  std::vector<int> all_idx(n);
  std::iota(all_idx.begin(), all_idx.end(), 0);
  const int s = net.s();

  std::vector<int> labels;
  ClusterResult clusters;
  // An external warm-start partition stands in for the first refresh.
  int next_refresh = 1;
  if (!initial_labels.empty()) {
    labels = canonical_labels(initial_labels);
    clusters.labels = labels;
    clusters.k = 1 + *std::max_element(labels.begin(), labels.end());
    next_refresh = 1 + std::max(1, cfg.cluster_refresh_period);
  }
  const int never = std::numeric_limits<int>::max();
  auto advance_refresh = [&](int due) {
    return cfg.cluster_refresh_period > 0 ? due + cfg.cluster_refresh_period : never;
  };
  if (!initial_labels.empty() && cfg.cluster_refresh_period == 0) next_refresh = never;

  double prev_change = 1.0;
  bool prev_change_small = false;
  double last_fusion = 0.0;

  for (int loop = 1; loop <= cfg.max_loops; ++loop) {
    // Full-dataset eval-mode pass: embedding and report losses.
    t0 = Clock::now();
    ForwardCache cache;
    forward(net, data, all_idx, Mode::eval, &cache);
    Eigen::MatrixXd z = cache.latent;
    report.embed_seconds += seconds_since(t0);

    LoopRecord rec;
    rec.recon = reconstruction_loss(net, cache);
    RoughnessValue rough = roughness_penalty(net);
    rec.weight_penalty = orthogonality_penalty(net) + rough.l1;

    bool converged_now = false;
    if (loop == next_refresh) {
      t0 = Clock::now();
      std::vector<CentroidPath> paths(s);
      parallel_for(static_cast<std::size_t>(s), threads, [&](std::size_t d) {
        paths[d] = homotopy_path(z.row(static_cast<int>(d)).transpose(), graph);
      });
      MergeHierarchy hierarchy = joint_hierarchy(paths);
      clusters = select_persistent_partition(hierarchy, z, cfg.k_min, cfg.k_max, cfg.k_fixed);

      double lambda_star = hierarchy.lambda_at(clusters.k);
      last_fusion = 0.0;
      for (int d = 0; d < s; ++d)
        last_fusion += fusion_objective(z.row(d).transpose(), graph, lambda_star,
                                        paths[d].values_at(lambda_star));

      double change = labels.empty() ? 1.0 : label_change_fraction(labels, clusters.labels);
      labels = clusters.labels;
      bool small = change < cfg.label_change_tol;
      converged_now = small && prev_change_small && change <= prev_change;
      prev_change = change;
      prev_change_small = small;
      next_refresh = advance_refresh(next_refresh);
      rec.label_change = change;
      report.cluster_seconds += seconds_since(t0);
    }

    rec.k = clusters.k;
    rec.fusion = last_fusion;
    rec.clustering = labels.empty() ? 0.0 : clustering_loss(z, labels);
    report.loops.push_back(rec);
    report.embedding = std::move(z);

    if (converged_now) {
      report.converged = true;
      break;
    }
    if (loop == cfg.max_loops) break;
    // No refresh remains and the clustering gradient is off: further epochs
    // cannot change the reported result.
    if (next_refresh > cfg.max_loops && cfg.net.lambda_c == 0.0) break;

    t0 = Clock::now();
    run_epochs(net, data, labels, labels.empty() ? pretrain_w : finetune_w, momentum, rng,
               cfg.finetune_epochs, "finetuning");
    report.finetune_seconds += seconds_since(t0);
  }

  report.labels = labels;
  report.k = clusters.k;
  res.clusters = std::move(clusters);
  return res;
}

}  // namespace faeclust
