#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "faeclust/basis.hpp"

namespace faeclust {

// Raw discrete observations of one subject: values(r, d) is curve d at times[r].
// All output dimensions of a subject share the observation times.
struct SamplePath {
  std::int64_t subject_id = 0;
  Eigen::VectorXd times;   // strictly increasing, inside the basis domain
  Eigen::MatrixXd values;  // r x p
};

// Smoothed dataset: every sample is a p x m coefficient matrix on one shared
// basis. Row d of coeffs[i] expands output dimension d of subject i.
struct FunctionalDataset {
  BasisSystem basis;
  std::vector<std::int64_t> subject_ids;
  std::vector<Eigen::MatrixXd> coeffs;

  int size() const { return static_cast<int>(coeffs.size()); }
  int dims() const { return coeffs.empty() ? 0 : static_cast<int>(coeffs[0].rows()); }

  // Values of sample i on an arbitrary grid, p x |ts|.
  Eigen::MatrixXd evaluate(int i, const Eigen::VectorXd& ts) const;
  // Values of sample i on the quadrature grid (cached basis matrix), p x G.
  Eigen::MatrixXd quad_values(int i) const;
  // First derivative of sample i on the quadrature grid, p x G.
  Eigen::MatrixXd quad_derivs(int i) const;

  // sqrt( sum_d \int (f_d - g_d)^2 ) between samples i and j.
  double h_distance(int i, int j) const;
  // sqrt( sum_d \int f_d^2 ) of sample i.
  double h_norm(int i) const;
};

/**
 * Penalized least-squares smoothing of raw paths onto a basis: per subject and
 * output dimension, minimize ||y - B c||^2 + lambda c' P c with B the basis
 * evaluated at the observation times and P the curvature penalty. The normal
 * matrix is checked for conditioning before solving.
 */
FunctionalDataset smooth(const std::vector<SamplePath>& paths, const BasisSystem& basis,
                         double lambda);

struct StandardizeResult {
  FunctionalDataset data;
  Eigen::MatrixXd mean_grid;   // p x G pointwise mean of the input
  Eigen::MatrixXd scale_grid;  // p x G pointwise standard deviation used
  int degenerate_points = 0;   // grid points where the variance was ~0 (centered only)
};

/**
 * Pointwise standardization on the quadrature grid: subtract the cross-sample
 * mean and divide by the cross-sample standard deviation (population form,
 * divide by n), then re-project onto the basis by least squares on the grid.
 * Grid points with variance below 1e-10 are centered but not scaled; their
 * count is reported, not fatal.
 */
StandardizeResult standardize(const FunctionalDataset& data, bool center = true,
                              bool scale = true);

}  // namespace faeclust
