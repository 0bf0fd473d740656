#include "faeclust/fdata.hpp"

#include <cmath>
#include <string>

#include "faeclust/errors.hpp"

namespace faeclust {

namespace {

void validate_path(const SamplePath& sp, const BasisSystem& basis, int expected_dims) {
  const auto r = sp.times.size();
  if (r < 4)
    throw DataError("subject " + std::to_string(sp.subject_id) + " has " + std::to_string(r) +
                    " observations; at least 4 required");
  if (sp.values.rows() != r)
    throw DataError("subject " + std::to_string(sp.subject_id) +
                    ": times and values row counts differ");
  if (expected_dims > 0 && sp.values.cols() != expected_dims)
    throw DataError("subject " + std::to_string(sp.subject_id) +
                    ": inconsistent number of value columns");
  const double slack = 1e-12 * std::max(1.0, std::abs(basis.b - basis.a));
  for (Eigen::Index k = 0; k < r; ++k) {
    if (k > 0 && !(sp.times[k] > sp.times[k - 1]))
      throw DataError("subject " + std::to_string(sp.subject_id) +
                      ": observation times must be strictly increasing");
    if (sp.times[k] < basis.a - slack || sp.times[k] > basis.b + slack)
      throw DataError("subject " + std::to_string(sp.subject_id) +
                      ": observation time outside the basis domain");
  }
  if (!sp.values.allFinite())
    throw DataError("subject " + std::to_string(sp.subject_id) + " has non-finite values");
}

}  // namespace

Eigen::MatrixXd FunctionalDataset::evaluate(int i, const Eigen::VectorXd& ts) const {
  return coeffs.at(i) * basis.eval(ts, 0).transpose();
}

Eigen::MatrixXd FunctionalDataset::quad_values(int i) const {
  return coeffs.at(i) * basis.quad_basis.transpose();
}

Eigen::MatrixXd FunctionalDataset::quad_derivs(int i) const {
  return coeffs.at(i) * basis.quad_dbasis.transpose();
}

double FunctionalDataset::h_distance(int i, int j) const {
  const Eigen::MatrixXd diff = coeffs.at(i) - coeffs.at(j);
  double acc = 0.0;
  for (Eigen::Index d = 0; d < diff.rows(); ++d)
    acc += diff.row(d) * basis.gram * diff.row(d).transpose();
  return std::sqrt(std::max(0.0, acc));
}

double FunctionalDataset::h_norm(int i) const {
  const Eigen::MatrixXd& c = coeffs.at(i);
  double acc = 0.0;
  for (Eigen::Index d = 0; d < c.rows(); ++d) acc += c.row(d) * basis.gram * c.row(d).transpose();
  return std::sqrt(std::max(0.0, acc));
}

FunctionalDataset smooth(const std::vector<SamplePath>& paths, const BasisSystem& basis,
                         double lambda) {
  if (paths.empty()) throw DataError("cannot smooth an empty collection of paths");
  if (lambda < 0.0) throw DataError("smoothing penalty must be nonnegative");
  const int p = static_cast<int>(paths.front().values.cols());
  if (p < 1) throw DataError("paths must have at least one value column");

  FunctionalDataset out;
  out.basis = basis;
  out.subject_ids.reserve(paths.size());
  out.coeffs.reserve(paths.size());

  for (const SamplePath& sp : paths) {
    validate_path(sp, basis, p);
    if (sp.times.size() < basis.size && lambda == 0.0)
      throw DataError("subject " + std::to_string(sp.subject_id) +
                      ": fewer observations than basis functions needs lambda > 0");
    Eigen::MatrixXd B = basis.eval(sp.times, 0);
    Eigen::MatrixXd A = B.transpose() * B + lambda * basis.penalty;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12)
      throw NumericError("smoothing system for subject " + std::to_string(sp.subject_id) +
                         " is singular or ill-conditioned (cond > 1e12); increase lambda or "
                         "reduce the basis size");
    Eigen::MatrixXd C = A.ldlt().solve(B.transpose() * sp.values);  // m x p
    out.subject_ids.push_back(sp.subject_id);
    out.coeffs.push_back(C.transpose());
  }
  return out;
}

StandardizeResult standardize(const FunctionalDataset& data, bool center, bool scale) {
  const int n = data.size();
  if (n < 1) throw DataError("cannot standardize an empty dataset");
  const int p = data.dims();
  const int G = data.basis.grid_size();

  StandardizeResult res;
  res.data.basis = data.basis;
  res.data.subject_ids = data.subject_ids;
  res.data.coeffs.resize(n);
  res.mean_grid = Eigen::MatrixXd::Zero(p, G);
  res.scale_grid = Eigen::MatrixXd::Ones(p, G);

  // One G x n value matrix per output dimension.
  std::vector<Eigen::MatrixXd> vals(p, Eigen::MatrixXd(G, n));
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd v = data.quad_values(i);  // p x G
    for (int d = 0; d < p; ++d) vals[d].col(i) = v.row(d).transpose();
  }

  for (int d = 0; d < p; ++d) {
    Eigen::VectorXd mu = vals[d].rowwise().mean();
    Eigen::VectorXd var =
        (vals[d].colwise() - mu).array().square().matrix().rowwise().mean();
    if (center) {
      res.mean_grid.row(d) = mu.transpose();
      vals[d].colwise() -= mu;
    }
    if (scale) {
      Eigen::VectorXd sd(G);
      for (int g = 0; g < G; ++g) {
        if (var[g] > 1e-10) {
          sd[g] = std::sqrt(var[g]);
        } else {
          sd[g] = 1.0;
          ++res.degenerate_points;
        }
      }
      res.scale_grid.row(d) = sd.transpose();
      vals[d].array().colwise() /= sd.array();
    }
    Eigen::MatrixXd C = data.basis.project_grid(vals[d]);  // m x n
    for (int i = 0; i < n; ++i) {
      if (d == 0) res.data.coeffs[i].resize(p, data.basis.size);
      res.data.coeffs[i].row(d) = C.col(i).transpose();
    }
  }
  return res;
}

}  // namespace faeclust
