#include "faeclust/basis.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <vector>

#include "faeclust/errors.hpp"

namespace faeclust {

namespace {

std::atomic<std::uint64_t> g_basis_counter{1};

// Index of the knot span containing t: largest i with knots[i] <= t,
// clamped so that t == b falls in the last non-empty span.
int find_span(const Eigen::VectorXd& knots, int size, int degree, double t) {
  if (t >= knots[size]) return size - 1;
  if (t <= knots[degree]) return degree;
  int lo = degree, hi = size;
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    (t < knots[mid] ? hi : lo) = mid;
  }
  return lo;
}

// Nonzero B-spline basis functions and their derivatives at t (span given),
// the standard recurrence over knot differences. ders is (nder+1) x (degree+1);
// row k holds the k-th derivatives of the degree+1 functions active on the span.
void ders_basis_funs(const Eigen::VectorXd& knots, int span, double t, int degree, int nder,
                     Eigen::MatrixXd& ders) {
  const int p = degree;
  Eigen::MatrixXd ndu(p + 1, p + 1);
  Eigen::VectorXd left(p + 1), right(p + 1);
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - knots[span + 1 - j];
    right[j] = knots[span + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];  // knot span length (lower triangle)
      double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }

  ders.setZero(nder + 1, p + 1);
  for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);

  Eigen::MatrixXd a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a(0, 0) = 1.0;
    for (int k = 1; k <= nder; ++k) {
      double d = 0.0;
      int rk = r - k, pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      int j1 = (rk >= -1) ? 1 : -rk;
      int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  // Multiply through by p! / (p-k)!.
  double fac = p;
  for (int k = 1; k <= nder; ++k) {
    for (int j = 0; j <= p; ++j) ders(k, j) *= fac;
    fac *= (p - k);
  }
}

// Fourier system: index 0 is the constant, then alternating sin/cos pairs of
// increasing integer frequency, all orthonormal on [a, b].
double fourier_value(int idx, int deriv, double t, double a, double len) {
  const double two_pi = 2.0 * std::numbers::pi;
  if (idx == 0) return deriv == 0 ? 1.0 / std::sqrt(len) : 0.0;
  int order = (idx + 1) / 2;
  double w = two_pi * order / len;
  double amp = std::sqrt(2.0 / len) * std::pow(w, deriv);
  double phase = w * (t - a);
  bool is_sin = (idx % 2 == 1);
  // d/dt sin = cos, d/dt cos = -sin; fold the derivative count into a phase shift.
  int shift = deriv % 4;
  double v = is_sin ? std::sin(phase + shift * std::numbers::pi / 2.0)
                    : std::cos(phase + shift * std::numbers::pi / 2.0);
  return amp * v;
}

}  // namespace

BasisKind basis_kind_from_string(const std::string& s) {
  if (s == "bspline") return BasisKind::bspline;
  if (s == "fourier") return BasisKind::fourier;
  throw ConfigError("unknown basis kind '" + s + "' (expected bspline or fourier)");
}

std::string to_string(BasisKind k) {
  return k == BasisKind::bspline ? "bspline" : "fourier";
}

Eigen::VectorXd uniform_grid(double a, double b, int n) {
  if (n < 2) throw DataError("grid needs at least 2 points");
  Eigen::VectorXd g(n);
  for (int i = 0; i < n; ++i) g[i] = a + (b - a) * i / (n - 1);
  g[n - 1] = b;
  return g;
}

void gauss_legendre(int q, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  nodes.resize(q);
  weights.resize(q);
  // Newton iteration on the Legendre polynomial from the Chebyshev-like guess.
  for (int i = 0; i < q; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (q + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= q; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = q * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[q - 1 - i] = x;
    weights[q - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

Eigen::MatrixXd BasisSystem::eval(const Eigen::VectorXd& ts, int deriv) const {
  if (deriv < 0) throw DataError("derivative order must be >= 0");
  const double slack = 1e-12 * std::max(1.0, std::abs(b - a));
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(ts.size(), size);
  if (kind == BasisKind::bspline) {
    Eigen::MatrixXd ders;
    for (Eigen::Index r = 0; r < ts.size(); ++r) {
      double t = ts[r];
      if (t < a - slack || t > b + slack)
        throw DataError("evaluation point " + std::to_string(t) + " outside domain [" +
                        std::to_string(a) + ", " + std::to_string(b) + "]");
      t = std::min(std::max(t, a), b);
      int span = find_span(knots, size, degree, t);
      int nder = std::min(deriv, degree);
      ders_basis_funs(knots, span, t, degree, nder, ders);
      if (deriv <= degree)
        for (int j = 0; j <= degree; ++j) out(r, span - degree + j) = ders(deriv, j);
      // Derivatives beyond the degree vanish identically; row stays zero.
    }
  } else {
    for (Eigen::Index r = 0; r < ts.size(); ++r) {
      double t = ts[r];
      if (t < a - slack || t > b + slack)
        throw DataError("evaluation point " + std::to_string(t) + " outside domain [" +
                        std::to_string(a) + ", " + std::to_string(b) + "]");
      t = std::min(std::max(t, a), b);
      for (int j = 0; j < size; ++j) out(r, j) = fourier_value(j, deriv, t, a, b - a);
    }
  }
  return out;
}

Eigen::MatrixXd BasisSystem::project_grid(const Eigen::MatrixXd& z) const {
  if (z.rows() != quad_basis.rows())
    throw DataError("grid values have " + std::to_string(z.rows()) + " rows, expected " +
                    std::to_string(quad_basis.rows()));
  Eigen::MatrixXd ata = quad_basis.transpose() * quad_basis;
  return ata.ldlt().solve(quad_basis.transpose() * z);
}

double BasisSystem::inner(const Eigen::VectorXd& cf, const Eigen::VectorXd& cg) const {
  if (cf.size() != size || cg.size() != size)
    throw DataError("coefficient length does not match basis size");
  return cf.dot(gram * cg);
}

BasisSystem build_basis(BasisKind kind, int size, int degree, double a, double b) {
  if (!(a < b)) throw DataError("basis domain requires a < b");
  if (size < 1) throw DataError("basis size must be positive");
  BasisSystem bs;
  bs.kind = kind;
  bs.size = size;
  bs.a = a;
  bs.b = b;
  bs.id = g_basis_counter.fetch_add(1);

  const int target = std::max(4 * size, 200);
  std::vector<double> edges;  // panel boundaries of the composite rule
  int per_panel = 0;

  if (kind == BasisKind::bspline) {
    if (degree < 1) throw DataError("bspline degree must be >= 1");
    if (size < degree + 1)
      throw DataError("bspline basis needs size >= degree + 1");
    bs.degree = degree;
    const int nknots = size + degree + 1;
    const int nspans = size - degree;
    bs.knots.resize(nknots);
    for (int i = 0; i <= degree; ++i) {
      bs.knots[i] = a;
      bs.knots[nknots - 1 - i] = b;
    }
    for (int i = 1; i < nspans; ++i) bs.knots[degree + i] = a + (b - a) * i / nspans;
    edges.reserve(nspans + 1);
    for (int i = 0; i <= nspans; ++i) edges.push_back(a + (b - a) * i / nspans);
    // Panels match knot spans, so per-panel order degree+1 already integrates
    // products of two basis functions exactly; extra nodes only add accuracy.
    per_panel = std::max(degree + 1, (target + nspans - 1) / nspans);
  } else {
    bs.degree = 0;
    per_panel = 10;
    int npanels = (target + per_panel - 1) / per_panel;
    edges.reserve(npanels + 1);
    for (int i = 0; i <= npanels; ++i) edges.push_back(a + (b - a) * i / npanels);
  }

  Eigen::VectorXd ref_nodes, ref_weights;
  gauss_legendre(per_panel, ref_nodes, ref_weights);
  const int npanels = static_cast<int>(edges.size()) - 1;
  const int G = npanels * per_panel;
  bs.quad_nodes.resize(G);
  bs.quad_weights.resize(G);
  for (int p = 0; p < npanels; ++p) {
    double lo = edges[p], hi = edges[p + 1];
    double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
    for (int j = 0; j < per_panel; ++j) {
      bs.quad_nodes[p * per_panel + j] = mid + half * ref_nodes[j];
      bs.quad_weights[p * per_panel + j] = half * ref_weights[j];
    }
  }

  bs.quad_basis = bs.eval(bs.quad_nodes, 0);
  bs.quad_dbasis = bs.eval(bs.quad_nodes, 1);
  Eigen::MatrixXd d2 = bs.eval(bs.quad_nodes, 2);
  bs.gram = bs.quad_basis.transpose() * bs.quad_weights.asDiagonal() * bs.quad_basis;
  bs.penalty = d2.transpose() * bs.quad_weights.asDiagonal() * d2;
  // Symmetrize away quadrature round-off.
  bs.gram = ((bs.gram + bs.gram.transpose()) / 2.0).eval();
  bs.penalty = ((bs.penalty + bs.penalty.transpose()) / 2.0).eval();
  return bs;
}

bool same_recipe(const BasisSystem& x, const BasisSystem& y) {
  return x.kind == y.kind && x.size == y.size && x.a == y.a && x.b == y.b &&
         (x.kind != BasisKind::bspline || x.degree == y.degree);
}

}  // namespace faeclust
