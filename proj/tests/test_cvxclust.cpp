#include "faeclust/cvxclust.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "faeclust/errors.hpp"
#include "faeclust/labels.hpp"
#include "faeclust/metrics.hpp"

using namespace faeclust;

namespace {

SimilarityGraph complete_unit_graph(int n) {
  SimilarityGraph g;
  g.n = n;
  g.m_nn = n - 1;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      g.edges.push_back({i, j});
      g.weights.push_back(1.0);
    }
  }
  return g;
}

// Subgradient stationarity of the fusion objective, recomputed from scratch:
// group subjects by equal centroid value, then per group I the optimality
// condition (2|I|/n)(u_I - mean x_I) + lambda * sum_{cross edges} s sgn(u_I -
// u_other) = 0 must hold away from breakpoints.
double stationarity_residual(const Eigen::VectorXd& x, const SimilarityGraph& g,
                             const Eigen::VectorXd& u, double lambda) {
  const int n = static_cast<int>(x.size());
  std::vector<int> group(n, -1);
  std::vector<double> gval;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < static_cast<int>(gval.size()); ++k) {
      if (std::abs(u[i] - gval[k]) <= 1e-9 * std::max(1.0, std::abs(gval[k]))) {
        group[i] = k;
        break;
      }
    }
    if (group[i] < 0) {
      group[i] = static_cast<int>(gval.size());
      gval.push_back(u[i]);
    }
  }
  int ng = static_cast<int>(gval.size());
  std::vector<double> mean(ng, 0.0), sub(ng, 0.0);
  std::vector<int> size(ng, 0);
  for (int i = 0; i < n; ++i) {
    mean[group[i]] += x[i];
    ++size[group[i]];
  }
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    int ga = group[g.edges[e][0]], gb = group[g.edges[e][1]];
    if (ga == gb) continue;
    double sgn = gval[ga] > gval[gb] ? 1.0 : -1.0;
    sub[ga] += g.weights[e] * sgn;
    sub[gb] -= g.weights[e] * sgn;
  }
  double worst = 0.0;
  for (int k = 0; k < ng; ++k) {
    double r = 2.0 * size[k] / n * (gval[k] - mean[k] / size[k]) + lambda * sub[k];
    worst = std::max(worst, std::abs(r));
  }
  return worst;
}

SimilarityGraph mutual_knn_graph(const Eigen::VectorXd& pts, int m) {
  const int n = static_cast<int>(pts.size());
  Eigen::MatrixXd dist(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) dist(i, j) = std::abs(pts[i] - pts[j]);
  }
  auto nn = knn_lists(dist, m);
  std::set<std::array<int, 2>> mutual;
  for (int i = 0; i < n; ++i) {
    for (int j : nn[i]) {
      bool back = false;
      for (int k : nn[j]) back = back || k == i;
      if (back) mutual.insert({std::min(i, j), std::max(i, j)});
    }
  }
  SimilarityGraph g;
  g.n = n;
  g.m_nn = m;
  double scale = dist.sum() / (n * (n - 1));
  for (const auto& e : mutual) {
    g.edges.push_back(e);
    g.weights.push_back(std::exp(-dist(e[0], e[1]) / scale));
  }
  return g;
}

bool graph_connected(const SimilarityGraph& g) {
  std::vector<int> parent(g.n);
  for (int i = 0; i < g.n; ++i) parent[i] = i;
  std::function<int(int)> find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  int comps = g.n;
  for (const auto& e : g.edges) {
    int ra = find(e[0]), rb = find(e[1]);
    if (ra != rb) {
      parent[ra] = rb;
      --comps;
    }
  }
  return comps == 1;
}

}  // namespace

TEST_CASE("two points fuse at the hand-computed breakpoint") {
  Eigen::VectorXd x(2);
  x << 0.0, 2.0;
  SimilarityGraph g = complete_unit_graph(2);
  CentroidPath path = homotopy_path(x, g);

  REQUIRE(path.merges.size() == 1);
  CHECK(path.merges[0].lambda == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(path.birth_value[2] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(path.slope[2] == doctest::Approx(0.0));

  // Interior of the first segment: u_i(lambda) = x_i -+ lambda.
  Eigen::VectorXd mid = path.values_at(0.5);
  CHECK(mid[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mid[1] == doctest::Approx(1.5).epsilon(1e-12));
  // Beyond the breakpoint both sit at the grand mean.
  Eigen::VectorXd late = path.values_at(3.0);
  CHECK(late[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(late[1] == doctest::Approx(1.0).epsilon(1e-12));

  FistaResult ref = fista_fused(x, g, 0.5);
  CHECK(ref.converged);
  CHECK(ref.u[0] == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(ref.u[1] == doctest::Approx(1.5).epsilon(1e-7));
}

TEST_CASE("three equally spaced points on the complete graph merge together at 1/3") {
  Eigen::VectorXd x(3);
  x << 0.0, 1.0, 2.0;
  SimilarityGraph g = complete_unit_graph(3);
  CentroidPath path = homotopy_path(x, g);

  CHECK(path.slope[0] == doctest::Approx(3.0));
  CHECK(path.slope[1] == doctest::Approx(0.0));
  CHECK(path.slope[2] == doctest::Approx(-3.0));

  // Both crossings coincide; the tie is resolved toward the smallest pair
  // (0,1), and the fresh cluster absorbs 2 at the same lambda.
  REQUIRE(path.merges.size() == 2);
  CHECK(path.merges[0].lambda == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(path.merges[0].a == 0);
  CHECK(path.merges[0].b == 1);
  CHECK(path.merges[1].lambda == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(path.cluster_count(0.4) == 1);
  CHECK(path.cluster_count(0.2) == 3);
  CHECK(path.values_at(0.5)[0] == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::MatrixXd coph = path.cophenetic();
  CHECK(coph(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(coph(0, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(coph(1, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("duplicate inputs fuse immediately at lambda zero") {
  Eigen::VectorXd x(3);
  x << 1.0, 1.0, 5.0;
  CentroidPath path = homotopy_path(x, complete_unit_graph(3));
  REQUIRE(!path.merges.empty());
  CHECK(path.merges[0].lambda == doctest::Approx(0.0));
  CHECK(path.merges[0].a == 0);
  CHECK(path.merges[0].b == 1);
  CHECK(path.cluster_count(0.0) == 2);
}

TEST_CASE("path matches the FISTA oracle on random connected mutual-knn graphs") {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  for (int trial = 0; trial < 4; ++trial) {
    Eigen::VectorXd x(12);
    SimilarityGraph g;
    do {
      for (int i = 0; i < 12; ++i) x[i] = unif(rng);
      g = mutual_knn_graph(x, 4);
    } while (!graph_connected(g));

    CentroidPath path = homotopy_path(x, g);
    PathVerification check = verify_against_fista(x, g, path, 20);
    CHECK(check.max_deviation < 1e-6);
    CHECK(check.suspected_splits == 0);

    double top = path.merges.back().lambda;
    int prev = 13;
    for (int i = 0; i <= 30; ++i) {
      double lam = 1.1 * top * i / 30;
      Eigen::VectorXd u = path.values_at(lam);
      CHECK(stationarity_residual(x, g, u, lam) < 1e-8);
      int count = path.cluster_count(lam);
      CHECK(count <= prev);  // coalescence only
      prev = count;
    }
  }
}

TEST_CASE("joint hierarchy takes the max merge level across dimensions") {
  SimilarityGraph g = complete_unit_graph(3);
  Eigen::VectorXd d0(3), d1(3);
  d0 << 0.0, 1.0, 2.0;  // all pairs fuse at 1/3
  d1 << 0.0, 0.0, 3.0;  // (0,1) at 0, rest at 2/3
  std::vector<CentroidPath> paths = {homotopy_path(d0, g), homotopy_path(d1, g)};
  MergeHierarchy h = joint_hierarchy(paths);

  REQUIRE(h.steps.size() == 2);
  CHECK(h.steps[0].lambda == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(h.steps[0].a == 0);
  CHECK(h.steps[0].b == 1);
  CHECK(h.steps[1].lambda == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(h.steps[1].a == 0);
  CHECK(h.steps[1].b == 2);

  CHECK(h.labels_at(3) == std::vector<int>{0, 1, 2});
  CHECK(h.labels_at(2) == std::vector<int>{0, 0, 1});
  CHECK(h.labels_at(1) == std::vector<int>{0, 0, 0});
  CHECK(h.lambda_at(2) == doctest::Approx(1.0 / 3.0));
  CHECK(h.lambda_at(1) == doctest::Approx(2.0 / 3.0));
  CHECK(h.lambda_at(3) == doctest::Approx(0.0));
}

TEST_CASE("hierarchy cuts are nested as k decreases") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> noise(0.0, 1.0);
  int n = 15;
  SimilarityGraph g = complete_unit_graph(n);
  std::vector<CentroidPath> paths;
  for (int d = 0; d < 3; ++d) {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = noise(rng);
    paths.push_back(homotopy_path(x, g));
  }
  MergeHierarchy h = joint_hierarchy(paths);
  for (int k = n; k > 1; --k) {
    std::vector<int> fine = h.labels_at(k);
    std::vector<int> coarse = h.labels_at(k - 1);
    // Same fine cluster implies same coarse cluster.
    std::map<int, int> image;
    bool nested = true;
    for (int i = 0; i < n; ++i) {
      auto [it, fresh] = image.emplace(fine[i], coarse[i]);
      if (!fresh && it->second != coarse[i]) nested = false;
    }
    CHECK(nested);
  }
}

TEST_CASE("partition selection recovers two separated blobs") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> noise(0.0, 0.3);
  const int n = 24;
  Eigen::MatrixXd x(2, n);
  std::vector<int> truth(n);
  for (int i = 0; i < n; ++i) {
    truth[i] = i % 2;
    double cx = truth[i] == 0 ? -3.0 : 3.0;
    double cy = truth[i] == 0 ? 1.0 : -1.0;
    x(0, i) = cx + noise(rng);
    x(1, i) = cy + noise(rng);
  }

  Eigen::MatrixXd dist(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) dist(i, j) = (x.col(i) - x.col(j)).norm();
  }
  SimilarityGraph g = build_similarity_graph(dist, 4, false);
  std::vector<CentroidPath> paths;
  for (int d = 0; d < 2; ++d) {
    paths.push_back(homotopy_path(x.row(d).transpose(), g));
  }
  MergeHierarchy h = joint_hierarchy(paths);
  ClusterResult res = select_partition(h, x, 2, 6);

  CHECK(res.k == 2);
  CHECK(adjusted_rand_index(res.labels, truth) == doctest::Approx(1.0));
  CHECK(res.scores.count(2) == 1);
  CHECK(res.scores.at(2).silhouette > 0.8);
  CHECK(res.scores.at(2).calinski_harabasz > res.scores.at(3).calinski_harabasz);

  ClusterResult fixed = select_partition(h, x, 2, 6, 4);
  CHECK(fixed.k == 4);
  CHECK(*std::max_element(fixed.labels.begin(), fixed.labels.end()) == 3);
}

TEST_CASE("coincident embeddings cannot be partitioned") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 6);
  std::vector<CentroidPath> paths = {homotopy_path(Eigen::VectorXd::Zero(6), complete_unit_graph(6))};
  MergeHierarchy h = joint_hierarchy(paths);
  CHECK_THROWS_AS(select_partition(h, x, 2, 4), NumericError);
}
