#include "faeclust/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "faeclust/errors.hpp"
#include "faeclust/threading.hpp"

namespace faeclust {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Coprime step set for the elastic DP, plus pure horizontal/vertical moves.
std::vector<std::array<int, 2>> warp_steps(int max_step) {
  std::vector<std::array<int, 2>> steps = {{1, 0}, {0, 1}};
  for (int di = 1; di <= max_step; ++di)
    for (int dj = 1; dj <= max_step; ++dj)
      if (std::gcd(di, dj) == 1) steps.push_back({di, dj});
  return steps;
}

// One-directional elastic DP cost (squared); see elastic_distance for the
// segment cost convention.
double elastic_dp(const Eigen::MatrixXd& q1, const Eigen::MatrixXd& q2, double dt,
                  int max_step) {
  const int N = static_cast<int>(q1.cols());
  const auto steps = warp_steps(max_step);
  Eigen::MatrixXd D = Eigen::MatrixXd::Constant(N, N, kInf);
  D(0, 0) = 0.0;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      if (i == 0 && j == 0) continue;
      double best = kInf;
      for (const auto& st : steps) {
        const int pi = i - st[0], pj = j - st[1];
        if (pi < 0 || pj < 0) continue;
        const double prev = D(pi, pj);
        if (!(prev < best)) continue;
        double seg = 0.0;
        if (st[1] == 0) {
          // h jumps over [s_pi, s_i]; the unmatched SRV energy is the cost.
          seg = 0.5 * (q1.col(pi).squaredNorm() + q1.col(i).squaredNorm()) * dt;
        } else if (st[0] == 0) {
          // h is flat over [t_pj, t_j]; SRV(f o h) vanishes there.
          seg = 0.5 * (q2.col(pj).squaredNorm() + q2.col(j).squaredNorm()) * dt;
        } else {
          const double slope = static_cast<double>(st[0]) / st[1];
          const double sq = std::sqrt(slope);
          for (int l = 1; l <= st[1]; ++l) {
            const double x = pi + slope * l;  // fractional source index
            const int ix = std::min(static_cast<int>(x), N - 2);
            const double fr = x - ix;
            seg += (((1.0 - fr) * q1.col(ix) + fr * q1.col(ix + 1)) * sq - q2.col(pj + l))
                       .squaredNorm() *
                   dt;
          }
        }
        const double cand = prev + seg;
        if (cand < best) best = cand;
      }
      D(i, j) = best;
    }
  }
  return D(N - 1, N - 1);
}

// Backpointer-free banded DTW. row_lo/row_hi give the inclusive column window
// of each row; prune_ub (if finite) discards cells whose cumulative cost
// already exceeds a known achievable path cost.
double dtw_banded_cost(const Eigen::MatrixXd& f, const Eigen::MatrixXd& g,
                       const std::vector<int>& row_lo, const std::vector<int>& row_hi,
                       double prune_ub) {
  const int N = static_cast<int>(f.cols());
  const int M = static_cast<int>(g.cols());
  std::vector<double> prev, cur;
  int prev_lo = 0;
  for (int i = 0; i < N; ++i) {
    const int lo = std::max(0, row_lo[i]), hi = std::min(M - 1, row_hi[i]);
    cur.assign(hi - lo + 1, kInf);
    for (int j = lo; j <= hi; ++j) {
      double best = kInf;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        if (j > lo) best = std::min(best, cur[j - 1 - lo]);
        if (i > 0) {
          const int plo = prev_lo, phi = plo + static_cast<int>(prev.size()) - 1;
          if (j >= plo && j <= phi) best = std::min(best, prev[j - plo]);
          if (j - 1 >= plo && j - 1 <= phi) best = std::min(best, prev[j - 1 - plo]);
        }
      }
      if (best == kInf) continue;
      const double v = best + (f.col(i) - g.col(j)).squaredNorm();
      if (v <= prune_ub) cur[j - lo] = v;
    }
    prev.swap(cur);
    prev_lo = lo;
  }
  const int last_lo = std::max(0, row_lo[N - 1]);
  const int idx = M - 1 - last_lo;
  if (idx < 0 || idx >= static_cast<int>(prev.size())) return kInf;
  return prev[idx];
}

// Full-window DTW with path recovery, used as the base case and refinement
// step of the multiresolution mode.
struct DtwPathResult {
  double cost = 0.0;
  std::vector<std::array<int, 2>> path;  // (i, j) from (0,0) to (N-1, M-1)
};

DtwPathResult dtw_windowed_path(const Eigen::MatrixXd& f, const Eigen::MatrixXd& g,
                                const std::vector<int>& row_lo,
                                const std::vector<int>& row_hi) {
  const int N = static_cast<int>(f.cols());
  const int M = static_cast<int>(g.cols());
  // Offsets into a compact cost/backpointer arena, one slice per row.
  std::vector<int> lo(N), hi(N), base(N + 1, 0);
  for (int i = 0; i < N; ++i) {
    lo[i] = std::max(0, row_lo[i]);
    hi[i] = std::min(M - 1, row_hi[i]);
    base[i + 1] = base[i] + std::max(0, hi[i] - lo[i] + 1);
  }
  std::vector<double> D(base[N], kInf);
  std::vector<signed char> bp(base[N], -1);  // 0 diag, 1 up, 2 left
  auto at = [&](int i, int j) -> int { return base[i] + (j - lo[i]); };

  for (int i = 0; i < N; ++i) {
    for (int j = lo[i]; j <= hi[i]; ++j) {
      double best = kInf;
      signed char dir = -1;
      if (i == 0 && j == 0) {
        best = 0.0;
        dir = -1;
      } else {
        if (i > 0 && j > 0 && j - 1 >= lo[i - 1] && j - 1 <= hi[i - 1] &&
            D[at(i - 1, j - 1)] < best) {
          best = D[at(i - 1, j - 1)];
          dir = 0;
        }
        if (i > 0 && j >= lo[i - 1] && j <= hi[i - 1] && D[at(i - 1, j)] < best) {
          best = D[at(i - 1, j)];
          dir = 1;
        }
        if (j - 1 >= lo[i] && D[at(i, j - 1)] < best) {
          best = D[at(i, j - 1)];
          dir = 2;
        }
      }
      if (best == kInf && !(i == 0 && j == 0)) continue;
      D[at(i, j)] = best + (f.col(i) - g.col(j)).squaredNorm();
      bp[at(i, j)] = dir;
    }
  }

  DtwPathResult res;
  res.cost = D[at(N - 1, M - 1)];
  int i = N - 1, j = M - 1;
  while (true) {
    res.path.push_back({i, j});
    const signed char dir = bp[at(i, j)];
    if (dir < 0) break;
    if (dir == 0) {
      --i;
      --j;
    } else if (dir == 1) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(res.path.begin(), res.path.end());
  return res;
}

Eigen::MatrixXd halve_columns(const Eigen::MatrixXd& x) {
  const int N = static_cast<int>(x.cols());
  const int H = (N + 1) / 2;
  Eigen::MatrixXd out(x.rows(), H);
  for (int k = 0; k < H; ++k) {
    if (2 * k + 1 < N)
      out.col(k) = 0.5 * (x.col(2 * k) + x.col(2 * k + 1));
    else
      out.col(k) = x.col(2 * k);
  }
  return out;
}

DtwPathResult fast_dtw_rec(const Eigen::MatrixXd& f, const Eigen::MatrixXd& g, int radius) {
  const int N = static_cast<int>(f.cols());
  const int M = static_cast<int>(g.cols());
  const int min_size = radius + 2;
  std::vector<int> lo(N, 0), hi(N, M - 1);
  if (N <= min_size || M <= min_size) return dtw_windowed_path(f, g, lo, hi);

  const DtwPathResult coarse = fast_dtw_rec(halve_columns(f), halve_columns(g), radius);
  // Project the half-resolution path onto the fine grid and widen by radius.
  std::vector<int> pmin(N, M), pmax(N, -1);
  for (const auto& c : coarse.path) {
    for (int di = 0; di < 2; ++di) {
      const int i = std::min(2 * c[0] + di, N - 1);
      pmin[i] = std::min(pmin[i], std::max(0, 2 * c[1]));
      pmax[i] = std::max(pmax[i], std::min(M - 1, 2 * c[1] + 1));
    }
  }
  for (int i = 0; i < N; ++i) {
    if (pmax[i] < 0) {  // row skipped by the projection; inherit neighbors
      pmin[i] = i > 0 ? pmin[i - 1] : 0;
      pmax[i] = i > 0 ? pmax[i - 1] : 0;
    }
  }
  int run_max = 0;
  for (int i = 0; i < N; ++i) {
    run_max = std::max(run_max, pmax[i]);
    lo[i] = std::max(0, pmin[i] - radius);
    hi[i] = std::min(M - 1, run_max + radius);
  }
  // Monotone lower envelope keeps the window contiguous between rows.
  for (int i = N - 2; i >= 0; --i) lo[i] = std::min(lo[i], lo[i + 1]);
  return dtw_windowed_path(f, g, lo, hi);
}

}  // namespace

Metric metric_from_string(const std::string& s) {
  if (s == "l2") return Metric::l2;
  if (s == "srv") return Metric::srv;
  if (s == "dtw-fast" || s == "dtw_fast") return Metric::dtw_fast;
  if (s == "dtw-ultra" || s == "dtw_ultra") return Metric::dtw_ultra;
  throw ConfigError("unknown metric '" + s + "' (expected l2, srv, dtw-fast or dtw-ultra)");
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::l2: return "l2";
    case Metric::srv: return "srv";
    case Metric::dtw_fast: return "dtw-fast";
    default: return "dtw-ultra";
  }
}

NeighborhoodStrategy neighborhood_from_string(const std::string& s) {
  if (s == "knee") return NeighborhoodStrategy::knee;
  if (s == "connectivity") return NeighborhoodStrategy::connectivity;
  throw ConfigError("unknown neighborhood strategy '" + s + "'");
}

Eigen::MatrixXd srv_transform(const Eigen::MatrixXd& derivs) {
  Eigen::MatrixXd q(derivs.rows(), derivs.cols());
  for (Eigen::Index c = 0; c < derivs.cols(); ++c) {
    const double speed = derivs.col(c).norm();
    q.col(c) = speed > 1e-8 ? (derivs.col(c) / std::sqrt(speed)).eval()
                            : Eigen::VectorXd::Zero(derivs.rows()).eval();
  }
  return q;
}

Eigen::MatrixXd srv_on_grid(const FunctionalDataset& data, int i, int grid_n) {
  const Eigen::VectorXd ts = uniform_grid(data.basis.a, data.basis.b, grid_n);
  const Eigen::MatrixXd derivs = data.coeffs.at(i) * data.basis.eval(ts, 1).transpose();
  return srv_transform(derivs);
}

double elastic_distance_srv(const Eigen::MatrixXd& q1, const Eigen::MatrixXd& q2, double a,
                            double b, int max_step) {
  if (q1.cols() != q2.cols() || q1.rows() != q2.rows())
    throw DataError("elastic distance needs SRV grids of equal shape");
  const int N = static_cast<int>(q1.cols());
  if (N < 16) throw DataError("elastic distance needs a grid of at least 16 points");
  const double dt = (b - a) / (N - 1);
  const double d2 = std::min(elastic_dp(q1, q2, dt, max_step), elastic_dp(q2, q1, dt, max_step));
  return std::sqrt(std::max(0.0, d2));
}

double elastic_distance(const FunctionalDataset& data, int i, int j, int grid_n,
                        int max_step) {
  return elastic_distance_srv(srv_on_grid(data, i, grid_n), srv_on_grid(data, j, grid_n),
                              data.basis.a, data.basis.b, max_step);
}

double dtw_distance(const Eigen::MatrixXd& f, const Eigen::MatrixXd& g, DtwMode mode,
                    int radius) {
  if (f.rows() != g.rows()) throw DataError("dtw inputs must share the output dimension");
  const int N = static_cast<int>(f.cols());
  const int M = static_cast<int>(g.cols());
  if (N < 2 || M < 2) throw DataError("dtw needs grids of at least 2 points");

  if (mode == DtwMode::exact || (mode != DtwMode::ultra && radius >= std::max(N, M))) {
    std::vector<int> lo(N, 0), hi(N, M - 1);
    return dtw_banded_cost(f, g, lo, hi, kInf);
  }
  if (mode == DtwMode::ultra) {
    const int band = radius > 0 ? radius : static_cast<int>(std::ceil(0.1 * N));
    std::vector<int> lo(N), hi(N);
    for (int i = 0; i < N; ++i) {
      // Keep the corners reachable when N != M by tracking the main diagonal.
      const int center = static_cast<int>(std::round(static_cast<double>(i) * (M - 1) /
                                                     std::max(1, N - 1)));
      lo[i] = center - band;
      hi[i] = center + band;
    }
    double ub = kInf;
    if (N == M) {
      ub = 0.0;
      for (int i = 0; i < N; ++i) ub += (f.col(i) - g.col(i)).squaredNorm();
    }
    return dtw_banded_cost(f, g, lo, hi, ub);
  }
  if (radius < 1) throw DataError("fast dtw needs radius >= 1");
  return fast_dtw_rec(f, g, radius).cost;
}

Eigen::MatrixXd distance_matrix(const FunctionalDataset& data, Metric metric, int grid_n,
                                int radius, int threads) {
  const int n = data.size();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
  const int workers = resolve_threads(threads);

  std::vector<Eigen::MatrixXd> grids;  // per-sample values or SRVs
  if (metric != Metric::l2) {
    grids.resize(n);
    const Eigen::VectorXd ts = uniform_grid(data.basis.a, data.basis.b, grid_n);
    const Eigen::MatrixXd B = data.basis.eval(ts, 0).transpose();
    const Eigen::MatrixXd dB = data.basis.eval(ts, 1).transpose();
    for (int i = 0; i < n; ++i)
      grids[i] = metric == Metric::srv ? srv_transform(data.coeffs[i] * dB)
                                       : data.coeffs[i] * B;
  }

  parallel_for(n, workers, [&](std::size_t i) {
    for (int j = static_cast<int>(i) + 1; j < n; ++j) {
      double d = 0.0;
      switch (metric) {
        case Metric::l2: d = data.h_distance(static_cast<int>(i), j); break;
        case Metric::srv:
          d = elastic_distance_srv(grids[i], grids[j], data.basis.a, data.basis.b);
          break;
        case Metric::dtw_fast:
          d = dtw_distance(grids[i], grids[j], DtwMode::fast, std::max(1, radius));
          break;
        case Metric::dtw_ultra:
          d = dtw_distance(grids[i], grids[j], DtwMode::ultra, radius);
          break;
      }
      D(i, j) = d;
    }
  });
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) D(j, i) = D(i, j);
  return D;
}

std::vector<std::vector<int>> knn_lists(const Eigen::MatrixXd& dist, int m) {
  const int n = static_cast<int>(dist.rows());
  std::vector<std::vector<int>> nn(n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    order.erase(order.begin() + i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return dist(i, a) != dist(i, b) ? dist(i, a) < dist(i, b) : a < b;
    });
    nn[i].assign(order.begin(), order.begin() + std::min<std::size_t>(m, order.size()));
  }
  return nn;
}

namespace {

struct Dsu {
  std::vector<int> parent;
  explicit Dsu(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
};

bool union_knn_connected(const std::vector<std::vector<int>>& nn, int m) {
  const int n = static_cast<int>(nn.size());
  Dsu dsu(n);
  int comps = n;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < m && k < static_cast<int>(nn[i].size()); ++k)
      if (dsu.unite(i, nn[i][k])) --comps;
  return comps == 1;
}

}  // namespace

int select_neighborhood_size(const Eigen::MatrixXd& dist, NeighborhoodStrategy strategy) {
  const int n = static_cast<int>(dist.rows());
  if (n < 3) throw DataError("neighborhood selection needs at least 3 samples");
  const int fallback = static_cast<int>(std::ceil(std::log2(static_cast<double>(n))));

  if (strategy == NeighborhoodStrategy::connectivity) {
    const auto nn = knn_lists(dist, n - 1);
    for (int m = 1; m <= n - 1; ++m)
      if (union_knn_connected(nn, m)) return m;
    return n - 1;
  }

  // Knee: mean distance to the k-th nearest neighbor, then the sharpest bend
  // of that curve by discrete second differences.
  const int kmax = (n + 1) / 2;
  if (kmax < 3) return std::max(1, fallback);
  const auto nn = knn_lists(dist, kmax);
  Eigen::VectorXd curve(kmax);
  for (int k = 0; k < kmax; ++k) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += dist(i, nn[i][k]);
    curve[k] = acc / n;
  }
  int best_k = -1;
  double best_curv = 0.0;
  for (int k = 1; k + 1 < kmax; ++k) {
    const double curv = curve[k + 1] - 2.0 * curve[k] + curve[k - 1];
    if (std::abs(curv) >= 1e-12 && curv > best_curv) {
      best_curv = curv;
      best_k = k + 1;  // curve index k corresponds to neighborhood size k+1
    }
  }
  return best_k > 0 ? best_k : std::max(1, fallback);
}

std::vector<std::vector<std::pair<int, double>>> SimilarityGraph::adjacency() const {
  std::vector<std::vector<std::pair<int, double>>> adj(n);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    adj[edges[e][0]].push_back({edges[e][1], weights[e]});
    adj[edges[e][1]].push_back({edges[e][0], weights[e]});
  }
  return adj;
}

SimilarityGraph build_similarity_graph(const Eigen::MatrixXd& dist, int m, bool median_scale) {
  const int n = static_cast<int>(dist.rows());
  if (m < 1 || m > n - 1) throw DataError("neighborhood size must lie in [1, n-1]");

  double scale = 1.0;
  if (median_scale) {
    std::vector<double> pos;
    pos.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (dist(i, j) > 0.0) pos.push_back(dist(i, j));
    if (!pos.empty()) {
      std::sort(pos.begin(), pos.end());
      const std::size_t h = pos.size() / 2;
      scale = pos.size() % 2 == 1 ? pos[h] : 0.5 * (pos[h - 1] + pos[h]);
    }
  }

  const auto nn = knn_lists(dist, m);
  std::vector<std::vector<bool>> present(n, std::vector<bool>(n, false));
  for (int i = 0; i < n; ++i)
    for (int j : nn[i]) {
      present[std::min(i, j)][std::max(i, j)] = true;
    }

  SimilarityGraph g;
  g.n = n;
  g.m_nn = m;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (present[i][j]) {
        g.edges.push_back({i, j});
        g.weights.push_back(std::exp(-dist(i, j) / scale));
      }
  return g;
}

}  // namespace faeclust
