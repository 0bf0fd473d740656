#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "faeclust/fdata.hpp"

namespace faeclust {

enum class SimKind { hypersphere, hyperbolic, swissroll, lorenz, pendulum };
SimKind sim_kind_from_string(const std::string& s);
std::string to_string(SimKind k);

/**
 * Recipe for one simulated dataset. Negative counts mean "use the default for
 * this kind": hypersphere (100 samples, 3 dims, 100 steps, 2 clusters),
 * hyperbolic (200, 2, 50, 2), swissroll (300, 2, 200, 4), lorenz (100, 3,
 * 100, 3), pendulum (200, 2, 100, 4). Observation times are n_steps evenly
 * spaced points on [0, 1]; cluster k holds the samples with i % n_clusters == k.
 */
struct SimSpec {
  SimKind kind = SimKind::hypersphere;
  int n_samples = -1;
  int n_dims = -1;
  int n_steps = -1;
  int n_clusters = -1;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
};

// Fills in the per-kind defaults and validates ranges.
SimSpec resolve(const SimSpec& spec);

struct SimResult {
  std::vector<SamplePath> paths;
  std::vector<int> labels;
};

/**
 * Monotone time warp on [0, 1] built from random increasing knot images with
 * monotone cubic (Fritsch-Carlson) interpolation. max_speed_ratio bounds the
 * derivative within [1/ratio, ratio]; ratio 1 yields the identity.
 */
struct WarpSpec {
  int n_knots = 4;
  double max_speed_ratio = 2.0;
  std::uint64_t seed = 1;
};

struct Warp {
  Eigen::VectorXd x, y, d;  // knot sites, images and interpolant derivatives
  double operator()(double t) const;
  double deriv(double t) const;
};

// Rejection-samples until the derivative bound holds (at most 100 draws).
Warp make_warp(const WarpSpec& spec);

// Dataset generation; subjects get independent RNG streams derived from
// (seed, subject_id), so results are bitwise reproducible and independent of
// any parallel schedule. The warped overload evaluates each subject's curve
// at its own random h(t) before adding noise; generator parameters and noise
// draws match the unwarped call with the same spec.
SimResult generate(const SimSpec& spec);
SimResult generate(const SimSpec& spec, const WarpSpec& warp);

// Re-parameterizes every sample of a smoothed dataset: values are resampled
// at h(t) on the quadrature grid (h rescaled to the basis domain) and
// projected back onto the basis. One warp per sample.
FunctionalDataset apply_warp(const FunctionalDataset& data, const std::vector<Warp>& hs);

/**
 * Classic RK4 for y' = f(t, y), returning states at the requested sample
 * times (strictly increasing, starting at or after t0). Each inter-sample
 * interval is covered by equal substeps no longer than `step`, so the sample
 * times are hit exactly.
 */
Eigen::MatrixXd rk4_path(
    const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& y0, double t0, double step,
    const Eigen::VectorXd& sample_times);

}  // namespace faeclust
