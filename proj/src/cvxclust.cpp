#include "faeclust/cvxclust.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>
#include <tuple>

#include "faeclust/errors.hpp"

namespace faeclust {

namespace {

// Disjoint-set over subjects, tracking the smallest member as representative.
struct Dsu {
  std::vector<int> parent, rep;
  explicit Dsu(int n) : parent(n), rep(n) {
    for (int i = 0; i < n; ++i) parent[i] = rep[i] = i;
  }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  // Returns false when already joined.
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    rep[a] = std::min(rep[a], rep[b]);
    return true;
  }
};

int sign3(double d, double eps) {
  if (d > eps) return 1;
  if (d < -eps) return -1;
  return 0;
}

}  // namespace

double fusion_objective(const Eigen::VectorXd& x, const SimilarityGraph& graph, double lambda,
                        const Eigen::VectorXd& u) {
  const int n = static_cast<int>(x.size());
  double f = (x - u).squaredNorm() / n;
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    f += lambda * graph.weights[e] * std::abs(u[graph.edges[e][0]] - u[graph.edges[e][1]]);
  }
  return f;
}

FistaResult fista_fused(const Eigen::VectorXd& x, const SimilarityGraph& graph, double lambda,
                        double tol, int max_iter) {
  const int n = static_cast<int>(x.size());
  const int ne = static_cast<int>(graph.edges.size());
  FistaResult res;
  if (lambda <= 0.0 || ne == 0) {
    res.u = x;
    res.converged = true;
    return res;
  }

  auto apply_dt = [&](const Eigen::VectorXd& v) {  // D^T v, length n
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (int e = 0; e < ne; ++e) {
      out[graph.edges[e][0]] += v[e];
      out[graph.edges[e][1]] -= v[e];
    }
    return out;
  };
  auto apply_d = [&](const Eigen::VectorXd& w) {  // D w, length ne
    Eigen::VectorXd out(ne);
    for (int e = 0; e < ne; ++e) {
      out[e] = w[graph.edges[e][0]] - w[graph.edges[e][1]];
    }
    return out;
  };

  // Lipschitz constant of the dual gradient: (n/2) lambda_max(D D^T), found by
  // power iteration on D^T D which shares the nonzero spectrum.
  Eigen::VectorXd pw = Eigen::VectorXd::LinSpaced(n, 1.0, 2.0);
  pw.normalize();
  double eig = 0.0;
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd next = apply_dt(apply_d(pw));
    double norm = next.norm();
    if (norm < 1e-300) break;
    eig = pw.dot(next);
    pw = next / norm;
  }
  const double lip = 0.5 * n * std::max(eig, 1e-12) * 1.000001;

  Eigen::VectorXd v = Eigen::VectorXd::Zero(ne);
  Eigen::VectorXd y = v;
  double t = 1.0;
  Eigen::VectorXd u = x;
  for (int it = 1; it <= max_iter; ++it) {
    // Gradient of the dual at y is -D u(y).
    Eigen::VectorXd uy = x - 0.5 * n * apply_dt(y);
    Eigen::VectorXd vnext = y + apply_d(uy) / lip;
    for (int e = 0; e < ne; ++e) {
      double box = lambda * graph.weights[e];
      vnext[e] = std::clamp(vnext[e], -box, box);
    }
    double tnext = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = vnext + ((t - 1.0) / tnext) * (vnext - v);
    v = vnext;
    t = tnext;

    u = x - 0.5 * n * apply_dt(v);
    double primal = fusion_objective(x, graph, lambda, u);
    double dual = v.dot(apply_d(x)) - 0.25 * n * apply_dt(v).squaredNorm();
    double gap = primal - dual;
    res.iterations = it;
    if (gap <= tol * std::max(1.0, std::abs(primal))) {
      res.converged = true;
      break;
    }
  }
  res.u = u;
  return res;
}

double CentroidPath::value_at(int subject, double lambda) const {
  int node = subject;
  while (parent[node] >= 0 && death_lambda[node] <= lambda) node = parent[node];
  return birth_value[node] + slope[node] * (lambda - birth_lambda[node]);
}

Eigen::VectorXd CentroidPath::values_at(double lambda) const {
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) out[i] = value_at(i, lambda);
  return out;
}

int CentroidPath::cluster_count(double lambda) const {
  int count = 0;
  for (std::size_t k = 0; k < birth_lambda.size(); ++k) {
    if (birth_lambda[k] <= lambda && lambda < death_lambda[k]) ++count;
  }
  return count;
}

Eigen::MatrixXd CentroidPath::cophenetic() const {
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd coph = Eigen::MatrixXd::Constant(n, n, inf);
  coph.diagonal().setZero();
  std::vector<std::vector<int>> members(birth_lambda.size());
  for (int i = 0; i < n; ++i) members[i] = {i};
  for (const MergeEvent& ev : merges) {
    std::vector<int>& ma = members[ev.a];
    std::vector<int>& mb = members[ev.b];
    for (int i : ma) {
      for (int j : mb) {
        coph(i, j) = coph(j, i) = ev.lambda;
      }
    }
    int target = parent[ev.a];
    members[target].reserve(ma.size() + mb.size());
    members[target].insert(members[target].end(), ma.begin(), ma.end());
    members[target].insert(members[target].end(), mb.begin(), mb.end());
    ma.clear();
    mb.clear();
  }
  return coph;
}

CentroidPath homotopy_path(const Eigen::VectorXd& x, const SimilarityGraph& graph) {
  const int n = static_cast<int>(x.size());
  if (n != graph.n) throw DataError("homotopy: point count does not match graph size");
  if (n == 0) throw DataError("homotopy: empty input");

  CentroidPath path;
  path.n = n;
  const double inf = std::numeric_limits<double>::infinity();
  auto add_node = [&](double birth, double value, int size) {
    path.birth_lambda.push_back(birth);
    path.birth_value.push_back(value);
    path.slope.push_back(0.0);
    path.death_lambda.push_back(inf);
    path.parent.push_back(-1);
    path.left.push_back(-1);
    path.right.push_back(-1);
    path.cluster_size.push_back(size);
    return static_cast<int>(path.birth_lambda.size()) - 1;
  };
  for (int i = 0; i < n; ++i) add_node(0.0, x[i], 1);

  // Graph adjacency between live nodes; std::map keeps neighbor iteration in
  // node-id order so slope sums are reproducible.
  std::vector<std::map<int, double>> nbrs(n);
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    int a = graph.edges[e][0], b = graph.edges[e][1];
    nbrs[a][b] += graph.weights[e];
    nbrs[b][a] += graph.weights[e];
  }

  auto value_of = [&](int k, double lambda) {
    return path.birth_value[k] + path.slope[k] * (lambda - path.birth_lambda[k]);
  };
  auto value_eps = [](double a, double b) {
    return 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
  };
  auto compute_slope = [&](int k, double lambda) {
    double acc = 0.0;
    double vk = value_of(k, lambda);
    for (const auto& [c, w] : nbrs[k]) {
      double vc = value_of(c, lambda);
      acc += w * sign3(vk - vc, value_eps(vk, vc));
    }
    return -0.5 * n * acc / path.cluster_size[k];
  };

  using Event = std::tuple<double, int, int>;  // (lambda, min id, max id)
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue;
  auto push_event = [&](int a, int b, double now) {
    double va = value_of(a, now), vb = value_of(b, now);
    double diff = va - vb;
    double rate = path.slope[a] - path.slope[b];
    double when;
    if (std::abs(diff) <= value_eps(va, vb)) {
      when = now;
    } else if (rate == 0.0) {
      return;  // parallel, never meet
    } else {
      double dt = -diff / rate;
      if (dt < -1e-12 * std::max(1.0, now)) return;  // diverging
      when = now + std::max(dt, 0.0);
    }
    queue.emplace(when, std::min(a, b), std::max(a, b));
  };

  std::vector<char> alive(n, 1);
  for (int i = 0; i < n; ++i) path.slope[i] = compute_slope(i, 0.0);
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    push_event(graph.edges[e][0], graph.edges[e][1], 0.0);
  }

  int active = n;
  double now = 0.0;
  while (!queue.empty() && active > 1) {
    auto [lam, a, b] = queue.top();
    queue.pop();
    if (!alive[a] || !alive[b]) continue;
    now = std::max(now, lam);

    double va = value_of(a, now), vb = value_of(b, now);
    int w = add_node(now, 0.5 * (va + vb), path.cluster_size[a] + path.cluster_size[b]);
    alive.push_back(1);
    alive[a] = alive[b] = 0;
    path.death_lambda[a] = path.death_lambda[b] = now;
    path.parent[a] = path.parent[b] = w;
    path.left[w] = a;
    path.right[w] = b;
    path.merges.push_back({now, a, b});
    --active;

    // Fuse adjacency, smaller map into larger, then retarget neighbors.
    nbrs.emplace_back();
    std::map<int, double>& small = nbrs[a].size() <= nbrs[b].size() ? nbrs[a] : nbrs[b];
    std::map<int, double>& large = nbrs[a].size() <= nbrs[b].size() ? nbrs[b] : nbrs[a];
    for (const auto& [c, wgt] : small) large[c] += wgt;
    large.erase(a);
    large.erase(b);
    nbrs[w] = std::move(large);
    small.clear();
    for (const auto& [c, wgt] : nbrs[w]) {
      nbrs[c].erase(a);
      nbrs[c].erase(b);
      nbrs[c][w] = wgt;
    }

    path.slope[w] = compute_slope(w, now);
    for (const auto& [c, wgt] : nbrs[w]) {
      (void)wgt;
      push_event(w, c, now);
    }
  }
  return path;
}

PathVerification verify_against_fista(const Eigen::VectorXd& x, const SimilarityGraph& graph,
                                      const CentroidPath& path, int n_lambdas) {
  PathVerification out;
  double top = path.merges.empty() ? 1.0 : path.merges.back().lambda;
  if (top <= 0.0) top = 1.0;
  for (int i = 0; i < n_lambdas; ++i) {
    double lam = 1.2 * top * (i + 1) / n_lambdas;
    FistaResult ref = fista_fused(x, graph, lam, 1e-11);
    double dev = (path.values_at(lam) - ref.u).lpNorm<Eigen::Infinity>();
    out.max_deviation = std::max(out.max_deviation, dev);
    if (dev > 1e-3) ++out.suspected_splits;
  }
  return out;
}

std::vector<int> MergeHierarchy::labels_at(int k) const {
  if (k < min_clusters() || k > n) throw DataError("hierarchy cut outside realizable range");
  Dsu dsu(n);
  for (int m = 0; m < n - k; ++m) dsu.unite(steps[m].a, steps[m].b);
  std::vector<int> labels(n);
  std::map<int, int> remap;
  for (int i = 0; i < n; ++i) {
    int root = dsu.find(i);
    auto [it, fresh] = remap.emplace(root, static_cast<int>(remap.size()));
    (void)fresh;
    labels[i] = it->second;
  }
  return labels;
}

double MergeHierarchy::lambda_at(int k) const {
  if (k < min_clusters() || k > n) throw DataError("hierarchy cut outside realizable range");
  if (k == n) return 0.0;
  return steps[n - k - 1].lambda;
}

MergeHierarchy joint_hierarchy(const std::vector<CentroidPath>& paths) {
  if (paths.empty()) throw DataError("joint hierarchy needs at least one dimension");
  const int n = paths[0].n;
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(n, n);
  for (const CentroidPath& p : paths) {
    if (p.n != n) throw DataError("joint hierarchy: inconsistent path sizes");
    joint = joint.cwiseMax(p.cophenetic());
  }

  // Single linkage = minimum spanning tree edges applied in ascending order.
  std::vector<char> used(n, 0);
  std::vector<double> best(n, inf);
  std::vector<int> from(n, -1);
  used[0] = 1;
  for (int j = 1; j < n; ++j) {
    best[j] = joint(0, j);
    from[j] = 0;
  }
  std::vector<std::tuple<double, int, int>> tree;
  for (int step = 1; step < n; ++step) {
    int pick = -1;
    for (int j = 0; j < n; ++j) {
      if (!used[j] && (pick < 0 || best[j] < best[pick])) pick = j;
    }
    if (pick < 0) break;
    used[pick] = 1;
    // An infinite best edge means `pick` starts a fresh component (pairs that
    // never co-merge in some dimension); span it without recording an edge.
    if (std::isfinite(best[pick])) {
      tree.emplace_back(best[pick], std::min(from[pick], pick), std::max(from[pick], pick));
    }
    for (int j = 0; j < n; ++j) {
      if (!used[j] && joint(pick, j) < best[j]) {
        best[j] = joint(pick, j);
        from[j] = pick;
      }
    }
  }
  std::sort(tree.begin(), tree.end());

  MergeHierarchy h;
  h.n = n;
  Dsu dsu(n);
  for (const auto& [lam, i, j] : tree) {
    int ra = dsu.find(i), rb = dsu.find(j);
    int repa = dsu.rep[ra], repb = dsu.rep[rb];
    dsu.unite(ra, rb);
    h.steps.push_back({lam, std::min(repa, repb), std::max(repa, repb)});
  }
  return h;
}

double silhouette_score(const Eigen::MatrixXd& dist, const std::vector<int>& labels) {
  const int n = static_cast<int>(labels.size());
  int k = 1 + *std::max_element(labels.begin(), labels.end());
  std::vector<int> sizes(k, 0);
  for (int lab : labels) ++sizes[lab];
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (sizes[labels[i]] <= 1) continue;  // singleton contributes 0
    std::vector<double> mean_to(k, 0.0);
    for (int j = 0; j < n; ++j) {
      if (j != i) mean_to[labels[j]] += dist(i, j);
    }
    double a = mean_to[labels[i]] / (sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != labels[i] && sizes[c] > 0) b = std::min(b, mean_to[c] / sizes[c]);
    }
    double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / n;
}

PartitionScores partition_scores(const Eigen::MatrixXd& x, const std::vector<int>& labels) {
  const int n = static_cast<int>(x.cols());
  const int s = static_cast<int>(x.rows());
  int k = 1 + *std::max_element(labels.begin(), labels.end());

  Eigen::MatrixXd dist(n, n);
  for (int i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) {
      dist(i, j) = dist(j, i) = (x.col(i) - x.col(j)).norm();
    }
  }

  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(s, k);
  std::vector<int> sizes(k, 0);
  for (int i = 0; i < n; ++i) {
    centroids.col(labels[i]) += x.col(i);
    ++sizes[labels[i]];
  }
  for (int c = 0; c < k; ++c) centroids.col(c) /= std::max(sizes[c], 1);
  Eigen::VectorXd gmean = x.rowwise().mean();

  double wss = 0.0, bss = 0.0;
  Eigen::VectorXd spread = Eigen::VectorXd::Zero(k);
  for (int i = 0; i < n; ++i) {
    wss += (x.col(i) - centroids.col(labels[i])).squaredNorm();
    spread[labels[i]] += (x.col(i) - centroids.col(labels[i])).norm();
  }
  for (int c = 0; c < k; ++c) {
    spread[c] /= std::max(sizes[c], 1);
    bss += sizes[c] * (centroids.col(c) - gmean).squaredNorm();
  }

  PartitionScores out;
  out.silhouette = silhouette_score(dist, labels);
  double db = 0.0;
  for (int c = 0; c < k; ++c) {
    double worst = 0.0;
    for (int d = 0; d < k; ++d) {
      if (d == c) continue;
      double sep = (centroids.col(c) - centroids.col(d)).norm();
      worst = std::max(worst, (spread[c] + spread[d]) / std::max(sep, 1e-300));
    }
    db += worst / k;
  }
  out.davies_bouldin = db;
  if (k > 1) {
    double ratio = bss / std::max(wss, 1e-300);
    out.calinski_harabasz = ratio * (n - k) / (k - 1);
  }
  return out;
}

ClusterResult select_partition(const MergeHierarchy& h, const Eigen::MatrixXd& x, int k_min,
                               int k_max, int k_fixed) {
  const int n = static_cast<int>(x.cols());
  if (n != h.n) throw DataError("select_partition: embedding size does not match hierarchy");

  double spread = 0.0;
  for (int i = 0; i < n && spread <= 1e-12; ++i) {
    for (int j = i + 1; j < n; ++j) spread = std::max(spread, (x.col(i) - x.col(j)).norm());
  }
  if (spread <= 1e-12) {
    throw NumericError("no valid partition: all embedded points coincide");
  }

  ClusterResult res;
  int lo = std::max(2, k_min);
  int hi = std::min(k_max, n - 1);
  double best = -std::numeric_limits<double>::infinity();
  for (int k = lo; k <= hi; ++k) {
    if (k < h.min_clusters()) {
      std::fprintf(stderr, "warning: skipping k=%d, similarity graph only allows %d clusters\n", k,
                   h.min_clusters());
      continue;
    }
    std::vector<int> labels = h.labels_at(k);
    int observed = 1 + *std::max_element(labels.begin(), labels.end());
    if (observed >= n) {
      std::fprintf(stderr, "warning: skipping degenerate singleton-only cut at k=%d\n", k);
      continue;
    }
    PartitionScores scores = partition_scores(x, labels);
    res.scores[k] = scores;
    if (scores.silhouette > best) {
      best = scores.silhouette;
      res.k = k;
      res.labels = std::move(labels);
    }
  }
  if (k_fixed > 0) {
    if (k_fixed < h.min_clusters() || k_fixed > n) {
      throw DataError("fixed cluster count outside realizable range");
    }
    res.k = k_fixed;
    res.labels = h.labels_at(k_fixed);
    if (res.scores.find(k_fixed) == res.scores.end() && k_fixed >= 2 && k_fixed < n) {
      res.scores[k_fixed] = partition_scores(x, res.labels);
    }
    return res;
  }
  if (res.labels.empty()) {
    throw NumericError("no valid partition in the requested cluster range");
  }
  return res;
}

}  // namespace faeclust
