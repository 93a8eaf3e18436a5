#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "cplink/errors.hpp"
#include "cplink/tensor.hpp"

namespace cplink {

/// Floor applied to the model value before log and division so empty regions
/// of a sparse model cannot produce infinities.
inline constexpr double kCellFloor = 1e-10;

/// Penalty weights. angular_weight, l2_weight and cannot_link_weight scale the
/// three regularizers; angular_threshold holds the per-mode cosine level above
/// which component pairs are penalized.
struct HyperParams {
  double angular_weight = 0.0;
  double l2_weight = 0.0;
  double cannot_link_weight = 0.0;
  std::array<double, 3> angular_threshold{0.0, 0.0, 0.0};

  void validate() const {
    if (!(angular_weight >= 0.0) || !(l2_weight >= 0.0) || !(cannot_link_weight >= 0.0))
      throw validation_error("HyperParams: penalty weights must be nonnegative");
    for (double t : angular_threshold)
      if (!(t >= 0.0) || !(t < 1.0))
        throw validation_error("HyperParams: angular thresholds must lie in [0, 1)");
  }
};

/// Sparse binary incompatibility matrix between mode-2 and mode-3 items.
/// Stored as the sorted, duplicate-free list of flagged (row, col) pairs.
class CannotLinkMatrix {
 public:
  CannotLinkMatrix() = default;

  CannotLinkMatrix(Index rows, Index cols, std::vector<std::pair<Index, Index>> pairs)
      : rows_(rows), cols_(cols), pairs_(std::move(pairs)) {
    if (rows_ < 1 || cols_ < 1)
      throw validation_error("CannotLinkMatrix: dimensions must be >= 1");
    for (const auto& [j, k] : pairs_)
      if (j < 0 || j >= rows_ || k < 0 || k >= cols_)
        throw validation_error("CannotLinkMatrix: pair index out of bounds");
    std::sort(pairs_.begin(), pairs_.end());
    if (std::adjacent_find(pairs_.begin(), pairs_.end()) != pairs_.end())
      throw validation_error("CannotLinkMatrix: duplicate pair");
  }

  static CannotLinkMatrix empty(Index rows, Index cols) {
    return CannotLinkMatrix(rows, cols, {});
  }

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  const std::vector<std::pair<Index, Index>>& pairs() const { return pairs_; }
  Index size() const { return static_cast<Index>(pairs_.size()); }

 private:
  Index rows_ = 1;
  Index cols_ = 1;
  std::vector<std::pair<Index, Index>> pairs_;
};

/// Objective value split by term; total is the exact sum of the stored parts.
struct ObjectiveBreakdown {
  double kl = 0.0;
  double angular = 0.0;
  double l2 = 0.0;
  double cannot_link = 0.0;
  double total = 0.0;
};

/// What to do when a penalty meets an all-zero factor column: reject raises a
/// validation error; skip leaves the column (a degenerate component) out of
/// every pair it would participate in.
enum class ZeroColumns { reject, skip };

namespace detail {

inline void check_same_shape(const SparseCountTensor& x, const KruskalModel& m) {
  const auto d = m.dims();
  if (d[0] != x.dim(1) || d[1] != x.dim(2) || d[2] != x.dim(3))
    throw validation_error("tensor and model dimensions do not match");
}

// Column l2 norms with the zero-column policy applied; zero columns get norm 0.
inline Eigen::VectorXd column_norms_checked(const FactorMatrix& f, ZeroColumns policy,
                                            const char* where) {
  Eigen::VectorXd norms(f.cols());
  for (Index r = 0; r < f.cols(); ++r) {
    norms[r] = f.col(r).norm();
    if (norms[r] == 0.0 && policy == ZeroColumns::reject)
      throw validation_error(std::string(where) + ": zero-norm factor column");
  }
  return norms;
}

}  // namespace detail

/// Poisson likelihood loss: sum over every cell of z - x*log(z), dropping the
/// x-only terms. The dense sum of z collapses to a closed form in the column
/// sums, so only observed entries are visited. z is floored at kCellFloor
/// inside the log.
inline double kl_loss(const SparseCountTensor& x, const KruskalModel& m) {
  detail::check_same_shape(x, m);
  double total = reconstruction_total(m);
  for (const auto& e : x.entries()) {
    const double z = detail::cell_value(m, e.i, e.j, e.k);
    total -= static_cast<double>(e.count) * std::log(std::max(z, kCellFloor));
  }
  return total;
}

/// Angular diversity penalty on one factor matrix:
/// (weight / 2) * sum over distinct column pairs of max(0, cos(p, r) - theta)^2.
/// Column scale cancels in the cosine, so callers may pass scaled columns.
inline double angular_penalty(const FactorMatrix& f, double theta, double weight,
                              ZeroColumns policy = ZeroColumns::reject) {
  if (!(theta >= 0.0) || !(theta < 1.0))
    throw validation_error("angular_penalty: theta must lie in [0, 1)");
  if (!(weight >= 0.0))
    throw validation_error("angular_penalty: weight must be nonnegative");
  const Eigen::VectorXd norms =
      detail::column_norms_checked(f, policy, "angular_penalty");
  double acc = 0.0;
  for (Index r = 0; r < f.cols(); ++r) {
    if (norms[r] == 0.0) continue;
    for (Index p = 0; p < r; ++p) {
      if (norms[p] == 0.0) continue;
      const double cos = f.col(p).dot(f.col(r)) / (norms[p] * norms[r]);
      const double excess = cos - theta;
      if (excess > 0.0) acc += excess * excess;
    }
  }
  return 0.5 * weight * acc;
}

/// (weight / 2) * sum of squared l2 norms of every factor column, all modes.
inline double l2_penalty(const KruskalModel& m, double weight) {
  if (!(weight >= 0.0)) throw validation_error("l2_penalty: weight must be nonnegative");
  double acc = 0.0;
  for (const auto& f : m.factors) acc += f.squaredNorm();
  return 0.5 * weight * acc;
}

/// weight * trace(B^T M C): weight times the sum of B(j,:) . C(k,:) over the
/// flagged pairs (j, k).
inline double cannot_link_penalty(const FactorMatrix& b, const CannotLinkMatrix& m,
                                  const FactorMatrix& c, double weight) {
  if (!(weight >= 0.0))
    throw validation_error("cannot_link_penalty: weight must be nonnegative");
  if (b.rows() != m.rows() || c.rows() != m.cols())
    throw validation_error("cannot_link_penalty: matrix dimensions do not match");
  if (b.cols() != c.cols())
    throw validation_error("cannot_link_penalty: factor rank mismatch");
  double acc = 0.0;
  for (const auto& [j, k] : m.pairs()) acc += b.row(j).dot(c.row(k));
  return weight * acc;
}

/// All four objective terms at once. A zero penalty weight short-circuits its
/// term, so with cannot_link_weight == 0 the link matrix is never touched.
inline ObjectiveBreakdown full_objective(const SparseCountTensor& x,
                                         const KruskalModel& m,
                                         const CannotLinkMatrix& links,
                                         const HyperParams& hp,
                                         ZeroColumns policy = ZeroColumns::reject) {
  hp.validate();
  ObjectiveBreakdown out;
  out.kl = kl_loss(x, m);
  if (hp.angular_weight > 0.0)
    for (int mode = 1; mode <= 3; ++mode)
      out.angular += angular_penalty(
          m.factor(mode), hp.angular_threshold[static_cast<std::size_t>(mode - 1)],
          hp.angular_weight, policy);
  if (hp.l2_weight > 0.0) out.l2 = l2_penalty(m, hp.l2_weight);
  if (hp.cannot_link_weight > 0.0)
    out.cannot_link =
        cannot_link_penalty(m.factor(2), links, m.factor(3), hp.cannot_link_weight);
  out.total = out.kl + out.angular + out.l2 + out.cannot_link;
  return out;
}

namespace detail {

// Ratios x / max(z, floor) at the observed entries, in storage order.
inline std::vector<WeightedEntry> ratio_entries(const SparseCountTensor& x,
                                                const KruskalModel& m) {
  std::vector<WeightedEntry> out;
  out.reserve(x.entries().size());
  for (const auto& e : x.entries()) {
    const double z = cell_value(m, e.i, e.j, e.k);
    out.push_back({e.i, e.j, e.k,
                   static_cast<double>(e.count) / std::max(z, kCellFloor)});
  }
  return out;
}

// Per-component product of the column sums of the two modes other than `mode`.
inline Eigen::VectorXd other_mode_colsum_products(const KruskalModel& m, int mode) {
  Eigen::VectorXd out = Eigen::VectorXd::Ones(m.rank());
  for (int other = 1; other <= 3; ++other) {
    if (other == mode) continue;
    out = out.cwiseProduct(m.factor(other).colwise().sum().transpose());
  }
  return out;
}

}  // namespace detail

/// Gradient of the full objective with respect to one factor matrix, holding
/// the weights and the other modes fixed. Four additive parts:
///   likelihood: weight_r * (prod of other-mode column sums
///               - mttkrp of x/z over the observed entries),
///   angular:    sum over partner columns p != r with cos(p, r) above theta of
///               weight * excess * d(cos)/d(column r),
///   l2:         l2_weight * column,
///   links:      cannot_link_weight * (M C) for mode 2, (M^T B) for mode 3.
inline Eigen::MatrixXd objective_gradient(const SparseCountTensor& x,
                                          const KruskalModel& m,
                                          const CannotLinkMatrix& links,
                                          const HyperParams& hp, int mode,
                                          ZeroColumns policy = ZeroColumns::reject) {
  if (mode < 1 || mode > 3)
    throw validation_error("objective_gradient: mode must be 1, 2, or 3");
  hp.validate();
  detail::check_same_shape(x, m);
  const auto ratios = detail::ratio_entries(x, m);
  const Eigen::VectorXd colsum_prod = detail::other_mode_colsum_products(m, mode);
  const FactorMatrix& f = m.factor(mode);

  Eigen::MatrixXd grad = -mttkrp(ratios, m, mode);
  grad.rowwise() += colsum_prod.transpose();
  grad *= m.weights.asDiagonal();

  if (hp.angular_weight > 0.0) {
    const double theta = hp.angular_threshold[static_cast<std::size_t>(mode - 1)];
    const Eigen::VectorXd norms =
        detail::column_norms_checked(f, policy, "objective_gradient");
    for (Index r = 0; r < f.cols(); ++r) {
      if (norms[r] == 0.0) continue;
      for (Index p = 0; p < f.cols(); ++p) {
        if (p == r || norms[p] == 0.0) continue;
        const double cos = f.col(p).dot(f.col(r)) / (norms[p] * norms[r]);
        const double excess = cos - theta;
        if (excess <= 0.0) continue;
        grad.col(r) += hp.angular_weight * excess *
                       (f.col(p) / (norms[p] * norms[r]) -
                        cos * f.col(r) / (norms[r] * norms[r]));
      }
    }
  }

  if (hp.l2_weight > 0.0) grad += hp.l2_weight * f;

  if (hp.cannot_link_weight > 0.0 && mode != 1) {
    if (m.factor(2).rows() != links.rows() || m.factor(3).rows() != links.cols())
      throw validation_error("objective_gradient: link matrix dimensions do not match");
    for (const auto& [j, k] : links.pairs()) {
      if (mode == 2)
        grad.row(j) += hp.cannot_link_weight * m.factor(3).row(k);
      else
        grad.row(k) += hp.cannot_link_weight * m.factor(2).row(j);
    }
  }

  return grad;
}

/// Gradient of the likelihood term with respect to the component weights.
/// The penalties do not depend on the weights, so this is also the gradient
/// of the full objective.
inline Eigen::VectorXd lambda_gradient(const SparseCountTensor& x,
                                       const KruskalModel& m) {
  detail::check_same_shape(x, m);
  Eigen::VectorXd grad = Eigen::VectorXd::Ones(m.rank());
  for (int mode = 1; mode <= 3; ++mode)
    grad = grad.cwiseProduct(m.factor(mode).colwise().sum().transpose());
  const auto& A = m.factors[0];
  const auto& B = m.factors[1];
  const auto& C = m.factors[2];
  for (const auto& e : x.entries()) {
    const double z = detail::cell_value(m, e.i, e.j, e.k);
    const double w = static_cast<double>(e.count) / std::max(z, kCellFloor);
    grad -= w * A.row(e.i).cwiseProduct(B.row(e.j)).cwiseProduct(C.row(e.k)).transpose();
  }
  return grad;
}

/// Likelihood gradient with respect to the bias term (sigma and the three u
/// vectors). The penalties do not involve the bias.
struct BiasGradient {
  double sigma = 0.0;
  Eigen::VectorXd u1, u2, u3;

  Eigen::VectorXd& u(int mode) {
    switch (mode) {
      case 1: return u1;
      case 2: return u2;
      case 3: return u3;
      default: throw validation_error("BiasGradient::u: mode must be 1, 2, or 3");
    }
  }
};

inline BiasGradient bias_gradient(const SparseCountTensor& x, const KruskalModel& m) {
  if (!m.bias) throw validation_error("bias_gradient: model has no bias term");
  detail::check_same_shape(x, m);
  const auto& b = *m.bias;
  const double s1 = b.u1.sum(), s2 = b.u2.sum(), s3 = b.u3.sum();
  BiasGradient g;
  g.sigma = s1 * s2 * s3;
  g.u1 = Eigen::VectorXd::Constant(b.u1.size(), b.sigma * s2 * s3);
  g.u2 = Eigen::VectorXd::Constant(b.u2.size(), b.sigma * s1 * s3);
  g.u3 = Eigen::VectorXd::Constant(b.u3.size(), b.sigma * s1 * s2);
  for (const auto& e : x.entries()) {
    const double z = detail::cell_value(m, e.i, e.j, e.k);
    const double w = static_cast<double>(e.count) / std::max(z, kCellFloor);
    g.sigma -= w * b.u1[e.i] * b.u2[e.j] * b.u3[e.k];
    g.u1[e.i] -= w * b.sigma * b.u2[e.j] * b.u3[e.k];
    g.u2[e.j] -= w * b.sigma * b.u1[e.i] * b.u3[e.k];
    g.u3[e.k] -= w * b.sigma * b.u1[e.i] * b.u2[e.j];
  }
  return g;
}

}  // namespace cplink
