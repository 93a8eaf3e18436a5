#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "cplink/errors.hpp"

namespace cplink {

using Index = std::int64_t;
using Shape3 = std::array<Index, 3>;

/// Factor matrix with one column per component.
using FactorMatrix = Eigen::MatrixXd;

/// Tolerance for "this column sums to one" checks. Projections produce sums
/// that are exact to machine precision; the slack only absorbs rounding.
inline constexpr double kNormTol = 1e-8;

struct TensorEntry {
  Index i = 0, j = 0, k = 0;
  std::int64_t count = 0;

  friend bool operator==(const TensorEntry&, const TensorEntry&) = default;
};

/// One tensor cell paired with an arbitrary real weight. Used to feed
/// ratio-weighted MTTKRP without materializing a dense tensor.
struct WeightedEntry {
  Index i = 0, j = 0, k = 0;
  double weight = 0.0;
};

namespace detail {

inline bool coord_less(const TensorEntry& a, const TensorEntry& b) {
  return std::tie(a.i, a.j, a.k) < std::tie(b.i, b.j, b.k);
}

inline bool coord_equal(const TensorEntry& a, const TensorEntry& b) {
  return a.i == b.i && a.j == b.j && a.k == b.k;
}

}  // namespace detail

/// Three-mode count tensor in coordinate form. Zeros are implicit; stored
/// entries are strictly positive counts, sorted lexicographically by (i, j, k)
/// and duplicate-free, so any input entry order yields the same object.
class SparseCountTensor {
 public:
  SparseCountTensor(Shape3 shape, std::vector<TensorEntry> entries)
      : shape_(shape), entries_(std::move(entries)) {
    for (int m = 0; m < 3; ++m)
      if (shape_[static_cast<std::size_t>(m)] < 1)
        throw validation_error("SparseCountTensor: all dimensions must be >= 1");
    for (const auto& e : entries_) {
      if (e.i < 0 || e.i >= shape_[0] || e.j < 0 || e.j >= shape_[1] || e.k < 0 ||
          e.k >= shape_[2])
        throw validation_error("SparseCountTensor: entry index out of bounds");
      if (e.count < 1)
        throw validation_error("SparseCountTensor: entry counts must be >= 1");
    }
    std::sort(entries_.begin(), entries_.end(), detail::coord_less);
    for (std::size_t n = 1; n < entries_.size(); ++n)
      if (detail::coord_equal(entries_[n - 1], entries_[n]))
        throw validation_error("SparseCountTensor: duplicate entry coordinates");
    total_ = 0;
    for (const auto& e : entries_) total_ += e.count;
  }

  const Shape3& shape() const { return shape_; }

  /// mode is 1-based (1, 2, or 3) throughout the library.
  Index dim(int mode) const {
    if (mode < 1 || mode > 3) throw validation_error("dim: mode must be 1, 2, or 3");
    return shape_[static_cast<std::size_t>(mode - 1)];
  }

  const std::vector<TensorEntry>& entries() const { return entries_; }
  Index nnz() const { return static_cast<Index>(entries_.size()); }
  std::int64_t total_sum() const { return total_; }

 private:
  Shape3 shape_;
  std::vector<TensorEntry> entries_;
  std::int64_t total_ = 0;
};

/// Rank-one background term: sigma * u1 (x) u2 (x) u3 with strictly positive,
/// l1-normalized u vectors and sigma > 0.
struct BiasTerm {
  double sigma = 0.0;
  Eigen::VectorXd u1, u2, u3;

  const Eigen::VectorXd& u(int mode) const {
    switch (mode) {
      case 1: return u1;
      case 2: return u2;
      case 3: return u3;
      default: throw validation_error("BiasTerm::u: mode must be 1, 2, or 3");
    }
  }

  Eigen::VectorXd& u(int mode) {
    return const_cast<Eigen::VectorXd&>(std::as_const(*this).u(mode));
  }

  void validate(double tol = kNormTol) const {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw validation_error("BiasTerm: sigma must be finite and positive");
    for (int m = 1; m <= 3; ++m) {
      const auto& v = u(m);
      if (v.size() == 0) throw validation_error("BiasTerm: empty u vector");
      if (!(v.minCoeff() > 0.0))
        throw validation_error("BiasTerm: u entries must be strictly positive");
      if (std::abs(v.sum() - 1.0) > tol)
        throw validation_error("BiasTerm: u vector must sum to one");
    }
  }
};

/// Weighted sum of R rank-one components plus an optional bias term. Factor
/// columns are either l1-normalized or all-zero; an all-zero column marks a
/// degenerate component and forces its weight to zero.
struct KruskalModel {
  Eigen::VectorXd weights;               // one weight per component
  std::array<FactorMatrix, 3> factors;   // mode 1, 2, 3
  std::optional<BiasTerm> bias;

  Index rank() const { return static_cast<Index>(weights.size()); }

  Shape3 dims() const {
    return {static_cast<Index>(factors[0].rows()), static_cast<Index>(factors[1].rows()),
            static_cast<Index>(factors[2].rows())};
  }

  const FactorMatrix& factor(int mode) const {
    if (mode < 1 || mode > 3)
      throw validation_error("KruskalModel::factor: mode must be 1, 2, or 3");
    return factors[static_cast<std::size_t>(mode - 1)];
  }

  FactorMatrix& factor(int mode) {
    return const_cast<FactorMatrix&>(std::as_const(*this).factor(mode));
  }

  bool column_is_zero(int mode, Index r, double tol = kNormTol) const {
    const auto& f = factor(mode);
    return f.col(r).cwiseAbs().maxCoeff() <= tol;
  }

  void validate(double tol = kNormTol) const {
    const Index R = rank();
    for (int m = 1; m <= 3; ++m) {
      const auto& f = factor(m);
      if (f.cols() != R)
        throw validation_error("KruskalModel: factor rank mismatch");
      if (f.rows() < 1) throw validation_error("KruskalModel: empty factor mode");
      if (f.size() > 0 && f.minCoeff() < 0.0)
        throw validation_error("KruskalModel: factor entries must be nonnegative");
    }
    for (Index r = 0; r < R; ++r) {
      if (!(weights[r] >= 0.0) || !std::isfinite(weights[r]))
        throw validation_error("KruskalModel: weights must be finite and nonnegative");
      for (int m = 1; m <= 3; ++m) {
        const auto& f = factor(m);
        const double colsum = f.col(r).sum();
        const bool zero = f.col(r).cwiseAbs().maxCoeff() <= tol;
        if (!zero && std::abs(colsum - 1.0) > tol)
          throw validation_error(
              "KruskalModel: column must sum to one or be all-zero (normalization)");
        if (zero && weights[r] > tol)
          throw validation_error("KruskalModel: zero column requires zero weight");
      }
    }
    if (bias) {
      bias->validate(tol);
      const auto d = dims();
      if (bias->u1.size() != d[0] || bias->u2.size() != d[1] || bias->u3.size() != d[2])
        throw validation_error("KruskalModel: bias vector length mismatch");
    }
  }
};

namespace detail {

// z at one cell, no bounds checks; callers validate indices once.
inline double cell_value(const KruskalModel& m, Index i, Index j, Index k) {
  double z = 0.0;
  if (m.bias) z += m.bias->sigma * m.bias->u1[i] * m.bias->u2[j] * m.bias->u3[k];
  const auto& A = m.factors[0];
  const auto& B = m.factors[1];
  const auto& C = m.factors[2];
  for (Index r = 0; r < m.rank(); ++r)
    z += m.weights[r] * A(i, r) * B(j, r) * C(k, r);
  return z;
}

}  // namespace detail

/// Model value at one cell.
inline double reconstruct_at(const KruskalModel& m, Index i, Index j, Index k) {
  const auto d = m.dims();
  if (i < 0 || i >= d[0] || j < 0 || j >= d[1] || k < 0 || k >= d[2])
    throw validation_error("reconstruct_at: index out of bounds");
  return detail::cell_value(m, i, j, k);
}

/// Sum of the model over every cell, in closed form: each rank-one term
/// contributes the product of its column sums. Valid for any nonnegative
/// model, normalized or not.
inline double reconstruction_total(const KruskalModel& m) {
  double total = 0.0;
  if (m.bias)
    total += m.bias->sigma * m.bias->u1.sum() * m.bias->u2.sum() * m.bias->u3.sum();
  for (Index r = 0; r < m.rank(); ++r)
    total += m.weights[r] * m.factors[0].col(r).sum() * m.factors[1].col(r).sum() *
             m.factors[2].col(r).sum();
  return total;
}

/// Sum of the model over every cell for a normalized model: sigma plus the
/// sum of the weights. Errors if any column or u vector is off the simplex.
inline double model_total_sum(const KruskalModel& m) {
  m.validate();
  double total = m.bias ? m.bias->sigma : 0.0;
  return total + m.weights.sum();
}

/// Matricized-tensor-times-Khatri-Rao-product over an explicit entry list.
/// Row i of the result (mode 1) accumulates weight * B(j,:) .* C(k,:) over the
/// entries with first index i; modes 2 and 3 are the analogous pairings.
/// Entries are folded in list order, so a fixed list gives bit-equal results.
inline Eigen::MatrixXd mttkrp(std::span<const WeightedEntry> entries,
                              const KruskalModel& m, int mode) {
  if (mode < 1 || mode > 3) throw validation_error("mttkrp: mode must be 1, 2, or 3");
  const auto d = m.dims();
  Eigen::MatrixXd out =
      Eigen::MatrixXd::Zero(d[static_cast<std::size_t>(mode - 1)], m.rank());
  const auto& A = m.factors[0];
  const auto& B = m.factors[1];
  const auto& C = m.factors[2];
  for (const auto& e : entries) {
    if (e.i < 0 || e.i >= d[0] || e.j < 0 || e.j >= d[1] || e.k < 0 || e.k >= d[2])
      throw validation_error("mttkrp: entry index out of bounds");
    switch (mode) {
      case 1:
        out.row(e.i) += e.weight * B.row(e.j).cwiseProduct(C.row(e.k));
        break;
      case 2:
        out.row(e.j) += e.weight * A.row(e.i).cwiseProduct(C.row(e.k));
        break;
      default:
        out.row(e.k) += e.weight * A.row(e.i).cwiseProduct(B.row(e.j));
        break;
    }
  }
  return out;
}

}  // namespace cplink
