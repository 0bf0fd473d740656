#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

namespace faeclust {

enum class BasisKind { bspline, fourier };

BasisKind basis_kind_from_string(const std::string& s);
std::string to_string(BasisKind k);

/**
 * A fixed functional basis {b_1..b_m} on [a, b] together with its composite
 * Gauss-Legendre quadrature rule and the cached matrices every downstream
 * operation needs:
 *
 *   gram[u][v]    = \int b_u b_v
 *   penalty[u][v] = \int b_u'' b_v''
 *   quad_basis    = basis values at the quadrature nodes (G x m)
 *   quad_dbasis   = first derivatives at the quadrature nodes (G x m)
 *
 * The rule places nodes inside each knot span (B-splines) so that products of
 * two basis functions, which are piecewise polynomials of degree 2*degree,
 * are integrated exactly. Fourier systems use a fixed-order composite rule
 * whose panels are fine enough for the same polynomial-exactness guarantee.
 * The total node count is at least max(4m, 200).
 */
struct BasisSystem {
  BasisKind kind = BasisKind::bspline;
  int size = 0;    // number of basis functions m
  int degree = 0;  // spline degree; unused for fourier
  double a = 0.0, b = 1.0;
  Eigen::VectorXd knots;  // clamped knot vector (bspline only)

  Eigen::VectorXd quad_nodes;
  Eigen::VectorXd quad_weights;
  Eigen::MatrixXd quad_basis;
  Eigen::MatrixXd quad_dbasis;
  Eigen::MatrixXd gram;
  Eigen::MatrixXd penalty;
  std::uint64_t id = 0;  // unique per built system; used for mismatch checks

  // Basis (or derivative-of-basis) values at arbitrary points, |ts| x m.
  // Throws DataError when a point lies outside [a, b] beyond rounding slack.
  Eigen::MatrixXd eval(const Eigen::VectorXd& ts, int deriv = 0) const;

  // Coefficients of the ordinary least-squares fit to values sampled on the
  // quadrature grid; z is G x k (one column per function). Equivalent to
  // penalized smoothing on that grid with lambda = 0.
  Eigen::MatrixXd project_grid(const Eigen::MatrixXd& z) const;

  // \int f g for coefficient vectors on this basis.
  double inner(const Eigen::VectorXd& cf, const Eigen::VectorXd& cg) const;
  // Squared H = L2 norm, <c, c>.
  double squared_norm(const Eigen::VectorXd& c) const { return inner(c, c); }

  int grid_size() const { return static_cast<int>(quad_nodes.size()); }
};

// Builds the basis, its quadrature rule and cached matrices.
//  - bspline: clamped uniform knots, requires size >= degree + 1, degree >= 1
//  - fourier: orthonormal {1, sin, cos, ...} on [a, b]; degree is ignored
BasisSystem build_basis(BasisKind kind, int size, int degree, double a, double b);

// True when two systems were built from the same recipe (kind, size, degree,
// domain), even if they are distinct instances.
bool same_recipe(const BasisSystem& x, const BasisSystem& y);

// N evenly spaced points covering [a, b] inclusive.
Eigen::VectorXd uniform_grid(double a, double b, int n);

// Nodes/weights of the q-point Gauss-Legendre rule on [-1, 1].
void gauss_legendre(int q, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

}  // namespace faeclust
