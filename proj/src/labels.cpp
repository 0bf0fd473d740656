#include "faeclust/labels.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "faeclust/errors.hpp"

namespace faeclust {

namespace {

// Contingency table of two labelings plus its margins.
struct Contingency {
  std::vector<std::vector<long>> cells;  // R x C counts
  std::vector<long> row, col;
  long n = 0;
};

Contingency contingency(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty())
    throw DataError("label vectors must be nonempty and of equal length");
  std::map<int, int> ra, rb;
  for (int x : a) ra.emplace(x, static_cast<int>(ra.size()));
  for (int x : b) rb.emplace(x, static_cast<int>(rb.size()));
  Contingency c;
  c.cells.assign(ra.size(), std::vector<long>(rb.size(), 0));
  c.row.assign(ra.size(), 0);
  c.col.assign(rb.size(), 0);
  c.n = static_cast<long>(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const int i = ra[a[k]], j = rb[b[k]];
    ++c.cells[i][j];
    ++c.row[i];
    ++c.col[j];
  }
  return c;
}

bool identical_partitions(const Contingency& c) {
  // Identical iff every row and every column has a single nonzero cell that
  // exhausts its margin.
  if (c.cells.size() != c.cells[0].size()) return false;
  for (std::size_t i = 0; i < c.cells.size(); ++i) {
    long mx = 0;
    for (long v : c.cells[i]) mx = std::max(mx, v);
    if (mx != c.row[i]) return false;
  }
  return true;
}

double comb2(long k) { return 0.5 * static_cast<double>(k) * (k - 1); }

}  // namespace

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  const Contingency c = contingency(a, b);
  double sum_cells = 0.0, sum_row = 0.0, sum_col = 0.0;
  for (std::size_t i = 0; i < c.cells.size(); ++i)
    for (long v : c.cells[i]) sum_cells += comb2(v);
  for (long v : c.row) sum_row += comb2(v);
  for (long v : c.col) sum_col += comb2(v);
  const double total = comb2(c.n);
  const double expected = sum_row * sum_col / total;
  const double maximum = 0.5 * (sum_row + sum_col);
  if (std::abs(maximum - expected) < 1e-15)
    return identical_partitions(c) ? 1.0 : 0.0;
  return (sum_cells - expected) / (maximum - expected);
}

double adjusted_mutual_info(const std::vector<int>& a, const std::vector<int>& b) {
  const Contingency c = contingency(a, b);
  const double n = static_cast<double>(c.n);

  double mi = 0.0;
  for (std::size_t i = 0; i < c.cells.size(); ++i)
    for (std::size_t j = 0; j < c.cells[i].size(); ++j)
      if (c.cells[i][j] > 0) {
        const double nij = static_cast<double>(c.cells[i][j]);
        mi += (nij / n) * std::log(n * nij / (static_cast<double>(c.row[i]) * c.col[j]));
      }

  auto entropy = [&](const std::vector<long>& margin) {
    double h = 0.0;
    for (long v : margin)
      if (v > 0) h -= (v / n) * std::log(v / n);
    return h;
  };
  const double ha = entropy(c.row), hb = entropy(c.col);
  if (ha < 1e-15 && hb < 1e-15) return 1.0;  // both trivial single-cluster

  // Exact expected MI under the hypergeometric model of random labelings with
  // fixed margins; each cell contributes independently.
  double emi = 0.0;
  for (long ai : c.row)
    for (long bj : c.col) {
      const long lo = std::max(1L, ai + bj - c.n);
      const long hi = std::min(ai, bj);
      for (long nij = lo; nij <= hi; ++nij) {
        const double term =
            (static_cast<double>(nij) / n) *
            std::log(n * static_cast<double>(nij) / (static_cast<double>(ai) * bj));
        const double logp = std::lgamma(ai + 1.0) + std::lgamma(bj + 1.0) +
                            std::lgamma(c.n - ai + 1.0) + std::lgamma(c.n - bj + 1.0) -
                            std::lgamma(c.n + 1.0) - std::lgamma(nij + 1.0) -
                            std::lgamma(ai - nij + 1.0) - std::lgamma(bj - nij + 1.0) -
                            std::lgamma(c.n - ai - bj + nij + 1.0);
        emi += term * std::exp(logp);
      }
    }

  const double denom = std::max(ha, hb) - emi;
  if (std::abs(denom) < 1e-15) return identical_partitions(c) ? 1.0 : 0.0;
  return (mi - emi) / denom;
}

std::vector<int> canonical_labels(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int x : labels) {
    auto [it, inserted] = remap.emplace(x, static_cast<int>(remap.size()));
    out.push_back(it->second);
  }
  return out;
}

double label_change_fraction(const std::vector<int>& prev, const std::vector<int>& cur) {
  if (prev.size() != cur.size() || prev.empty())
    throw DataError("label vectors must be nonempty and of equal length");
  const std::vector<int> p = canonical_labels(prev), q = canonical_labels(cur);
  long diff = 0;
  for (std::size_t i = 0; i < p.size(); ++i) diff += (p[i] != q[i]);
  return static_cast<double>(diff) / static_cast<double>(p.size());
}

}  // namespace faeclust
