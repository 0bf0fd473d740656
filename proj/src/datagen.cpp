#include "faeclust/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "faeclust/errors.hpp"

namespace faeclust {

namespace {

using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent stream per (seed, subject); results do not depend on the order
// subjects are generated in.
std::mt19937_64 subject_rng(std::uint64_t seed, std::uint64_t subject) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(subject + 1)));
}

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double unit_normal(std::mt19937_64& rng) {
  double u1 = 0.0;
  do {
    u1 = unit_uniform(rng);
  } while (u1 <= 0.0);
  double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int full_dims(SimKind k) {
  switch (k) {
    case SimKind::hypersphere: return 3;
    case SimKind::hyperbolic: return 2;
    case SimKind::swissroll: return 3;
    case SimKind::lorenz: return 3;
    case SimKind::pendulum: return 2;
  }
  throw ConfigError("unknown simulation kind");
}

double wrap_angle(double th) {
  double w = std::fmod(th + M_PI, 2.0 * M_PI);
  if (w < 0) w += 2.0 * M_PI;
  return w - M_PI;
}

// Great circles on the unit sphere; clusters differ in rotation plane and
// period, subjects within a cluster only in phase.
MatrixXd hypersphere_curve(int label, std::mt19937_64& rng, const VectorXd& ts) {
  const double phi = 2.0 * M_PI * unit_uniform(rng);
  Vector3d axis(std::cos(2.39996 * label + 0.5), std::sin(2.39996 * label + 0.5),
                0.6 * std::cos(1.3 * label + 0.2));
  if (label == 0) axis = Vector3d(0.0, 0.0, 1.0);
  axis.normalize();
  Vector3d ref = std::abs(axis.x()) < 0.9 ? Vector3d(1, 0, 0) : Vector3d(0, 1, 0);
  Vector3d e1 = axis.cross(ref).normalized();
  Vector3d e2 = axis.cross(e1);
  const double omega = 2.0 * M_PI * (label + 1);
  MatrixXd out(ts.size(), 3);
  for (int j = 0; j < ts.size(); ++j) {
    Vector3d y = std::cos(omega * ts[j] + phi) * e1 + std::sin(omega * ts[j] + phi) * e2;
    out.row(j) = y.transpose();
  }
  return out;
}

// Oscillation along a diameter of the Poincare disk (a geodesic through the
// center); the cluster sets how far out the hyperbolic radius swings.
MatrixXd hyperbolic_curve(int label, std::mt19937_64& rng, const VectorXd& ts) {
  const double phi = 2.0 * M_PI * unit_uniform(rng);
  const double psi = unit_uniform(rng);
  const double lo = label == 0 ? 0.6 : 2.8;
  const double hi = label == 0 ? 1.0 : 3.6;
  const double amp = lo + (hi - lo) * unit_uniform(rng);
  MatrixXd out(ts.size(), 2);
  for (int j = 0; j < ts.size(); ++j) {
    double r = amp * (0.5 + 0.5 * std::sin(2.0 * M_PI * (ts[j] + psi)));
    double e = std::tanh(0.5 * r);
    out(j, 0) = e * std::cos(phi);
    out(j, 1) = e * std::sin(phi);
  }
  return out;
}

// Curves on the swissroll surface. Coordinates are ordered (theta cos theta,
// height, theta sin theta) so that truncation to two output dimensions keeps
// one roll coordinate plus the height that separates the vertical bands.
MatrixXd swissroll_curve(int label, std::mt19937_64& rng, const VectorXd& ts) {
  const double th0 = M_PI * (1.5 + unit_uniform(rng));
  const double dth = 1.0 + unit_uniform(rng);
  const double psi = unit_uniform(rng);
  const double center = 0.5 + label;
  MatrixXd out(ts.size(), 3);
  for (int j = 0; j < ts.size(); ++j) {
    double th = th0 + dth * ts[j];
    double z = center + 0.35 * std::sin(2.0 * M_PI * (ts[j] + psi));
    out(j, 0) = th * std::cos(th);
    out(j, 1) = z;
    out(j, 2) = th * std::sin(th);
  }
  return out;
}

// sigma = 10, beta = 8/3; rho 14 is subcritical (trajectories spiral into a
// fixed point), 21 and 28 give transient and sustained chaos. The horizon of
// 6 time units lets the subcritical spiral contract visibly.
MatrixXd lorenz_curve(int label, std::mt19937_64& rng, const VectorXd& ts) {
  const double rho = 14.0 + 7.0 * label;
  Vector3d y0(1.0, 1.0, 1.0);
  for (int d = 0; d < 3; ++d) y0[d] += 0.01 * unit_normal(rng);
  auto f = [rho](double, const VectorXd& y) {
    VectorXd dy(3);
    dy[0] = 10.0 * (y[1] - y[0]);
    dy[1] = y[0] * (rho - y[2]) - y[1];
    dy[2] = y[0] * y[1] - (8.0 / 3.0) * y[2];
    return dy;
  };
  return rk4_path(f, y0, 0.0, 1e-3, (6.0 * ts.array()).matrix());
}

// theta'' = -sin theta observed as (theta mod 2pi, theta'). Cluster energies
// straddle the separatrix at E = 1: two librations, two full rotations.
MatrixXd pendulum_curve(int label, std::mt19937_64& rng, const VectorXd& ts) {
  static const double kEnergies[4] = {-0.5, 0.5, 1.8, 3.2};
  double e = (label < 4 ? kEnergies[label] : -0.5 + 1.2 * label);
  e += 0.2 * (unit_uniform(rng) - 0.5);
  const double t_off = 12.0 * unit_uniform(rng);
  VectorXd y0(2);
  y0[0] = 0.0;
  y0[1] = std::sqrt(2.0 * (e + 1.0));
  auto f = [](double, const VectorXd& y) {
    VectorXd dy(2);
    dy[0] = y[1];
    dy[1] = -std::sin(y[0]);
    return dy;
  };
  MatrixXd out = rk4_path(f, y0, -t_off, 1e-2, (10.0 * ts.array()).matrix());
  for (int j = 0; j < out.rows(); ++j) out(j, 0) = wrap_angle(out(j, 0));
  return out;
}

MatrixXd curve_for(const SimSpec& s, int label, std::mt19937_64& rng,
                   const VectorXd& ts) {
  switch (s.kind) {
    case SimKind::hypersphere: return hypersphere_curve(label, rng, ts);
    case SimKind::hyperbolic: return hyperbolic_curve(label, rng, ts);
    case SimKind::swissroll: return swissroll_curve(label, rng, ts);
    case SimKind::lorenz: return lorenz_curve(label, rng, ts);
    case SimKind::pendulum: return pendulum_curve(label, rng, ts);
  }
  throw ConfigError("unknown simulation kind");
}

SimResult generate_impl(const SimSpec& spec, const WarpSpec* warp) {
  SimSpec s = resolve(spec);
  if (warp) {
    if (warp->n_knots < 2) throw ConfigError("warp needs at least 2 knots");
    if (warp->max_speed_ratio < 1.0)
      throw ConfigError("max_speed_ratio must be at least 1");
  }
  const VectorXd times = uniform_grid(0.0, 1.0, s.n_steps);
  SimResult res;
  res.paths.resize(s.n_samples);
  res.labels.resize(s.n_samples);
  for (int i = 0; i < s.n_samples; ++i) {
    const int label = i % s.n_clusters;
    std::mt19937_64 rng = subject_rng(s.seed, i);

    VectorXd ts = times;
    if (warp) {
      WarpSpec ws = *warp;
      ws.seed = splitmix64(warp->seed ^ splitmix64(i + 1));
      Warp h = make_warp(ws);
      for (int j = 0; j < ts.size(); ++j) ts[j] = std::clamp(h(ts[j]), 0.0, 1.0);
    }

    MatrixXd full = curve_for(s, label, rng, ts);
    SamplePath& path = res.paths[i];
    path.subject_id = i;
    path.times = times;
    path.values = full.leftCols(s.n_dims);
    if (s.noise_sigma > 0.0)
      for (int j = 0; j < path.values.rows(); ++j)
        for (int d = 0; d < s.n_dims; ++d)
          path.values(j, d) += s.noise_sigma * unit_normal(rng);
    res.labels[i] = label;
  }
  return res;
}

}  // namespace

SimKind sim_kind_from_string(const std::string& s) {
  if (s == "hypersphere") return SimKind::hypersphere;
  if (s == "hyperbolic") return SimKind::hyperbolic;
  if (s == "swissroll") return SimKind::swissroll;
  if (s == "lorenz") return SimKind::lorenz;
  if (s == "pendulum") return SimKind::pendulum;
  throw ConfigError("unknown simulation kind '" + s + "'");
}

std::string to_string(SimKind k) {
  switch (k) {
    case SimKind::hypersphere: return "hypersphere";
    case SimKind::hyperbolic: return "hyperbolic";
    case SimKind::swissroll: return "swissroll";
    case SimKind::lorenz: return "lorenz";
    case SimKind::pendulum: return "pendulum";
  }
  return "?";
}

SimSpec resolve(const SimSpec& spec) {
  SimSpec s = spec;
  int def_n = 0, def_d = 0, def_r = 0, def_k = 0;
  switch (s.kind) {
    case SimKind::hypersphere: def_n = 100, def_d = 3, def_r = 100, def_k = 2; break;
    case SimKind::hyperbolic: def_n = 200, def_d = 2, def_r = 50, def_k = 2; break;
    case SimKind::swissroll: def_n = 300, def_d = 2, def_r = 200, def_k = 4; break;
    case SimKind::lorenz: def_n = 100, def_d = 3, def_r = 100, def_k = 3; break;
    case SimKind::pendulum: def_n = 200, def_d = 2, def_r = 100, def_k = 4; break;
  }
  if (s.n_samples < 0) s.n_samples = def_n;
  if (s.n_dims < 0) s.n_dims = def_d;
  if (s.n_steps < 0) s.n_steps = def_r;
  if (s.n_clusters < 0) s.n_clusters = def_k;
  if (s.n_samples < 1) throw ConfigError("n_samples must be positive");
  if (s.n_steps < 2) throw ConfigError("n_steps must be at least 2");
  if (s.n_clusters < 1 || s.n_clusters > s.n_samples)
    throw ConfigError("n_clusters must lie in [1, n_samples]");
  if (s.n_dims < 1 || s.n_dims > full_dims(s.kind))
    throw ConfigError("n_dims out of range for this kind");
  if (s.noise_sigma < 0.0) throw ConfigError("noise_sigma must be non-negative");
  return s;
}

double Warp::operator()(double t) const {
  const int n = static_cast<int>(x.size());
  if (t <= x[0]) return y[0] + d[0] * (t - x[0]);
  if (t >= x[n - 1]) return y[n - 1] + d[n - 1] * (t - x[n - 1]);
  int i = static_cast<int>(std::upper_bound(x.data(), x.data() + n, t) - x.data()) - 1;
  i = std::clamp(i, 0, n - 2);
  const double dx = x[i + 1] - x[i];
  const double u = (t - x[i]) / dx;
  const double h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
  const double h10 = u * (1.0 - u) * (1.0 - u);
  const double h01 = u * u * (3.0 - 2.0 * u);
  const double h11 = u * u * (u - 1.0);
  return h00 * y[i] + h10 * dx * d[i] + h01 * y[i + 1] + h11 * dx * d[i + 1];
}

double Warp::deriv(double t) const {
  const int n = static_cast<int>(x.size());
  if (t <= x[0]) return d[0];
  if (t >= x[n - 1]) return d[n - 1];
  int i = static_cast<int>(std::upper_bound(x.data(), x.data() + n, t) - x.data()) - 1;
  i = std::clamp(i, 0, n - 2);
  const double dx = x[i + 1] - x[i];
  const double u = (t - x[i]) / dx;
  const double g00 = 6.0 * u * u - 6.0 * u;
  const double g10 = 3.0 * u * u - 4.0 * u + 1.0;
  const double g01 = -g00;
  const double g11 = 3.0 * u * u - 2.0 * u;
  return g00 * y[i] / dx + g10 * d[i] + g01 * y[i + 1] / dx + g11 * d[i + 1];
}

Warp make_warp(const WarpSpec& spec) {
  if (spec.n_knots < 2) throw ConfigError("warp needs at least 2 knots");
  if (spec.max_speed_ratio < 1.0)
    throw ConfigError("max_speed_ratio must be at least 1");

  Warp w;
  if (spec.max_speed_ratio == 1.0 || spec.n_knots == 2) {
    w.x = VectorXd::LinSpaced(2, 0.0, 1.0);
    w.y = w.x;
    w.d = VectorXd::Ones(2);
    return w;
  }

  const int K = spec.n_knots;
  std::mt19937_64 rng(spec.seed);
  const double spread = 0.5 * std::log(spec.max_speed_ratio);
  for (int attempt = 0; attempt < 100; ++attempt) {
    VectorXd gaps(K - 1);
    for (int i = 0; i < K - 1; ++i)
      gaps[i] = std::exp((2.0 * unit_uniform(rng) - 1.0) * spread);
    w.x = VectorXd::LinSpaced(K, 0.0, 1.0);
    w.y.resize(K);
    w.y[0] = 0.0;
    for (int i = 0; i < K - 1; ++i) w.y[i + 1] = w.y[i] + gaps[i];
    w.y /= w.y[K - 1];
    w.y[K - 1] = 1.0;

    // Fritsch-Carlson: average secant slopes, then pull derivatives into the
    // monotonicity region.
    VectorXd sec(K - 1);
    for (int i = 0; i < K - 1; ++i) sec[i] = (w.y[i + 1] - w.y[i]) / (w.x[i + 1] - w.x[i]);
    w.d.resize(K);
    w.d[0] = sec[0];
    w.d[K - 1] = sec[K - 2];
    for (int i = 1; i < K - 1; ++i) w.d[i] = 0.5 * (sec[i - 1] + sec[i]);
    for (int i = 0; i < K - 1; ++i) {
      const double alpha = w.d[i] / sec[i];
      const double beta = w.d[i + 1] / sec[i];
      const double norm2 = alpha * alpha + beta * beta;
      if (norm2 > 9.0) {
        const double tau = 3.0 / std::sqrt(norm2);
        w.d[i] = tau * alpha * sec[i];
        w.d[i + 1] = tau * beta * sec[i];
      }
    }

    bool ok = true;
    const double lo = 1.0 / spec.max_speed_ratio - 1e-9;
    const double hi = spec.max_speed_ratio + 1e-9;
    for (int j = 0; j <= 1000 && ok; ++j) {
      const double dv = w.deriv(j / 1000.0);
      ok = dv >= lo && dv <= hi;
    }
    if (ok) return w;
  }
  throw DataError("no warp satisfied the speed-ratio bound after 100 draws");
}

SimResult generate(const SimSpec& spec) { return generate_impl(spec, nullptr); }

SimResult generate(const SimSpec& spec, const WarpSpec& warp) {
  return generate_impl(spec, &warp);
}

FunctionalDataset apply_warp(const FunctionalDataset& data, const std::vector<Warp>& hs) {
  if (static_cast<int>(hs.size()) != data.size())
    throw DataError("apply_warp needs exactly one warp per sample");
  const BasisSystem& basis = data.basis;
  const int G = basis.grid_size();
  VectorXd warped(G);
  FunctionalDataset out;
  out.basis = basis;
  out.subject_ids = data.subject_ids;
  out.coeffs.resize(data.size());
  const double len = basis.b - basis.a;
  for (int i = 0; i < data.size(); ++i) {
    for (int g = 0; g < G; ++g) {
      const double t01 = (basis.quad_nodes[g] - basis.a) / len;
      warped[g] = basis.a + len * std::clamp(hs[i](t01), 0.0, 1.0);
    }
    Eigen::MatrixXd vals = data.evaluate(i, warped).transpose();  // G x p
    out.coeffs[i] = basis.project_grid(vals).transpose();
  }
  return out;
}

Eigen::MatrixXd rk4_path(
    const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& y0, double t0, double step,
    const Eigen::VectorXd& sample_times) {
  if (step <= 0.0) throw ConfigError("rk4 step must be positive");
  for (int j = 1; j < sample_times.size(); ++j)
    if (!(sample_times[j] > sample_times[j - 1]))
      throw DataError("rk4 sample times must be strictly increasing");
  if (sample_times.size() > 0 && sample_times[0] < t0)
    throw DataError("rk4 sample times must not precede the start time");

  MatrixXd out(sample_times.size(), y0.size());
  VectorXd y = y0;
  double t = t0;
  for (int j = 0; j < sample_times.size(); ++j) {
    const double target = sample_times[j];
    const double span = target - t;
    const int nsub = span > 0 ? static_cast<int>(std::ceil(span / step - 1e-12)) : 0;
    const double h = nsub > 0 ? span / nsub : 0.0;
    for (int k = 0; k < nsub; ++k) {
      VectorXd k1 = f(t, y);
      VectorXd k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
      VectorXd k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
      VectorXd k4 = f(t + h, y + h * k3);
      y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += h;
    }
    t = target;
    out.row(j) = y.transpose();
  }
  return out;
}

}  // namespace faeclust
