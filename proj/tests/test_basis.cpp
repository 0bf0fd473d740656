#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "faeclust/basis.hpp"
#include "faeclust/errors.hpp"

using namespace faeclust;

namespace {

// Independent integration oracle: composite trapezoid on a dense grid.
double trapezoid(const Eigen::VectorXd& grid, const Eigen::VectorXd& vals) {
  double acc = 0.0;
  for (Eigen::Index i = 1; i < grid.size(); ++i)
    acc += 0.5 * (vals[i] + vals[i - 1]) * (grid[i] - grid[i - 1]);
  return acc;
}

}  // namespace

TEST_CASE("gauss-legendre nodes integrate polynomials exactly") {
  Eigen::VectorXd x, w;
  gauss_legendre(5, x, w);
  CHECK(w.sum() == doctest::Approx(2.0).epsilon(1e-14));
  // 5-point rule is exact through degree 9 on [-1, 1].
  for (int k = 0; k <= 9; ++k) {
    double got = 0.0;
    for (int i = 0; i < 5; ++i) got += w[i] * std::pow(x[i], k);
    double want = (k % 2 == 1) ? 0.0 : 2.0 / (k + 1);
    CHECK(got == doctest::Approx(want).epsilon(1e-13));
  }
}

TEST_CASE("bspline basis fundamentals") {
  BasisSystem bs = build_basis(BasisKind::bspline, 12, 3, 0.0, 1.0);
  CHECK(bs.grid_size() >= 200);

  SUBCASE("partition of unity and local support") {
    Eigen::VectorXd ts = uniform_grid(0.0, 1.0, 37);
    Eigen::MatrixXd B = bs.eval(ts, 0);
    for (Eigen::Index r = 0; r < ts.size(); ++r) {
      CHECK(B.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK((B.row(r).array() >= -1e-14).all());
      CHECK((B.row(r).array() > 1e-12).count() <= 4);
    }
  }

  SUBCASE("first derivative matches central differences") {
    Eigen::VectorXd ts(3);
    ts << 0.21, 0.5, 0.83;
    Eigen::MatrixXd D = bs.eval(ts, 1);
    const double h = 1e-6;
    for (Eigen::Index r = 0; r < ts.size(); ++r) {
      Eigen::VectorXd lo(1), hi(1);
      lo << ts[r] - h;
      hi << ts[r] + h;
      Eigen::MatrixXd fd = (bs.eval(hi, 0) - bs.eval(lo, 0)) / (2 * h);
      for (int u = 0; u < bs.size; ++u)
        CHECK(D(r, u) == doctest::Approx(fd(0, u)).epsilon(1e-5));
    }
  }

  SUBCASE("evaluation outside the domain throws") {
    Eigen::VectorXd bad(1);
    bad << 1.5;
    CHECK_THROWS_AS(bs.eval(bad, 0), DataError);
    bad << -0.2;
    CHECK_THROWS_AS(bs.eval(bad, 0), DataError);
    // Endpoint with rounding slack is fine.
    bad << 1.0 + 1e-15;
    CHECK_NOTHROW(bs.eval(bad, 0));
  }
}

TEST_CASE("bernstein gram entry has its closed form") {
  // With size = degree + 1 the spline basis degenerates to Bernstein
  // polynomials; b_0(t) = (1-t)^3 and int_0^1 (1-t)^6 dt = 1/7.
  BasisSystem bs = build_basis(BasisKind::bspline, 4, 3, 0.0, 1.0);
  CHECK(bs.gram(0, 0) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  // Symmetry and positive definiteness.
  CHECK((bs.gram - bs.gram.transpose()).norm() == doctest::Approx(0.0));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(bs.gram);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("quadrature integrates polynomials up to 2*degree exactly") {
  for (double hi : {1.0, 2.5}) {
    BasisSystem bs = build_basis(BasisKind::bspline, 9, 3, 0.0, hi);
    for (int k = 0; k <= 6; ++k) {
      double got = (bs.quad_weights.array() * bs.quad_nodes.array().pow(k)).sum();
      double want = std::pow(hi, k + 1) / (k + 1);
      CHECK(got == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("gram and penalty agree with a dense-grid oracle") {
  BasisSystem bs = build_basis(BasisKind::bspline, 8, 3, 0.0, 1.0);
  Eigen::VectorXd grid = uniform_grid(0.0, 1.0, 40001);
  Eigen::MatrixXd B = bs.eval(grid, 0);
  Eigen::MatrixXd D2 = bs.eval(grid, 2);
  for (int u : {0, 3, 7}) {
    for (int v : {0, 2, 5}) {
      double g = trapezoid(grid, (B.col(u).array() * B.col(v).array()).matrix());
      CHECK(bs.gram(u, v) == doctest::Approx(g).epsilon(1e-6));
      double pen = trapezoid(grid, (D2.col(u).array() * D2.col(v).array()).matrix());
      CHECK(bs.penalty(u, v) == doctest::Approx(pen).epsilon(2e-4));
    }
  }
}

TEST_CASE("fourier basis is orthonormal with analytic curvature") {
  BasisSystem bs = build_basis(BasisKind::fourier, 7, 0, 0.0, 1.0);
  CHECK((bs.gram - Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff() < 1e-10);
  // First sin/cos pair has curvature norm (2*pi)^4.
  const double w4 = std::pow(2.0 * std::numbers::pi, 4);
  CHECK(bs.penalty(1, 1) == doctest::Approx(w4).epsilon(1e-10));
  CHECK(bs.penalty(2, 2) == doctest::Approx(w4).epsilon(1e-10));
  CHECK(std::abs(bs.penalty(1, 2)) < 1e-8);

  SUBCASE("derivative of the first sine") {
    Eigen::VectorXd ts(1);
    ts << 0.3;
    Eigen::MatrixXd D = bs.eval(ts, 1);
    const double want =
        std::sqrt(2.0) * 2.0 * std::numbers::pi * std::cos(2.0 * std::numbers::pi * 0.3);
    CHECK(D(0, 1) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("fourier basis on a shifted domain keeps orthonormality") {
  BasisSystem bs = build_basis(BasisKind::fourier, 5, 0, -2.0, 3.0);
  CHECK((bs.gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("project_grid inverts quad-grid evaluation") {
  BasisSystem bs = build_basis(BasisKind::bspline, 10, 3, 0.0, 2.0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd C(bs.size, 3);
  for (int u = 0; u < bs.size; ++u)
    for (int k = 0; k < 3; ++k) C(u, k) = nd(rng);
  Eigen::MatrixXd Z = bs.quad_basis * C;
  Eigen::MatrixXd got = bs.project_grid(Z);
  CHECK((got - C).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("basis construction rejects bad parameters") {
  CHECK_THROWS_AS(build_basis(BasisKind::bspline, 3, 3, 0.0, 1.0), DataError);
  CHECK_THROWS_AS(build_basis(BasisKind::bspline, 8, 0, 0.0, 1.0), DataError);
  CHECK_THROWS_AS(build_basis(BasisKind::bspline, 8, 3, 1.0, 1.0), DataError);
  CHECK_THROWS_AS(basis_kind_from_string("wavelet"), ConfigError);
}
