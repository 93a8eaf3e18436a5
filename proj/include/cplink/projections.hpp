#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "cplink/errors.hpp"
#include "cplink/tensor.hpp"

namespace cplink {

/// Euclidean projection onto the probability simplex, by the sort-and-shift
/// rule: sort descending, find the largest prefix whose running mean keeps the
/// shifted entries positive, clip the rest at zero.
inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  const Index n = v.size();
  if (n < 1) throw validation_error("project_simplex: empty vector");
  if (!v.allFinite()) throw validation_error("project_simplex: non-finite input");
  std::vector<double> sorted(v.data(), v.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double running = 0.0;
  double shift = 0.0;
  for (Index j = 0; j < n; ++j) {
    running += sorted[static_cast<std::size_t>(j)];
    const double candidate = (running - 1.0) / static_cast<double>(j + 1);
    if (sorted[static_cast<std::size_t>(j)] - candidate > 0.0) shift = candidate;
  }
  return (v.array() - shift).cwiseMax(0.0);
}

/// Simplex projection followed by an entry floor: entries below the floor are
/// pinned there and the remaining mass is rescaled over the free entries,
/// repeating until no free entry sits below the floor. The result stays on the
/// simplex with every entry >= floor, so it is safe under logs and division.
inline Eigen::VectorXd project_interior_simplex(const Eigen::VectorXd& v, double floor) {
  const Index n = v.size();
  if (n < 1) throw validation_error("project_interior_simplex: empty vector");
  if (!(floor > 0.0) || !(floor * static_cast<double>(n) < 1.0))
    throw validation_error(
        "project_interior_simplex: need 0 < floor and floor * length < 1");
  Eigen::VectorXd w = project_simplex(v);
  std::vector<bool> pinned(static_cast<std::size_t>(n), false);
  Index n_pinned = 0;
  for (;;) {
    bool changed = false;
    double free_sum = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (pinned[static_cast<std::size_t>(i)]) continue;
      if (w[i] < floor) {
        pinned[static_cast<std::size_t>(i)] = true;
        ++n_pinned;
        changed = true;
      } else {
        free_sum += w[i];
      }
    }
    if (!changed) break;
    // Pinning everything would need floor * n >= 1, excluded by the precondition.
    const double target = 1.0 - floor * static_cast<double>(n_pinned);
    const double scale = target / free_sum;
    for (Index i = 0; i < n; ++i) {
      if (pinned[static_cast<std::size_t>(i)])
        w[i] = floor;
      else
        w[i] *= scale;
    }
  }
  return w;
}

/// Zero out factor entries below tau, then rescale each surviving column back
/// onto the simplex. Columns losing all entries are left all-zero.
inline FactorMatrix hard_threshold(const FactorMatrix& f, double tau) {
  if (!(tau >= 0.0)) throw validation_error("hard_threshold: tau must be nonnegative");
  FactorMatrix out = f;
  for (Index r = 0; r < out.cols(); ++r) {
    bool touched = false;
    for (Index i = 0; i < out.rows(); ++i) {
      if (out(i, r) < tau && out(i, r) != 0.0) {
        out(i, r) = 0.0;
        touched = true;
      }
    }
    if (!touched) continue;  // keep untouched columns bit-identical
    const double colsum = out.col(r).sum();
    if (colsum > 0.0) out.col(r) /= colsum;
  }
  return out;
}

}  // namespace cplink
