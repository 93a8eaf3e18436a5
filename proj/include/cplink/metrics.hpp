#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "cplink/errors.hpp"
#include "cplink/objective.hpp"
#include "cplink/tensor.hpp"

namespace cplink {

/// Summary statistics of a fitted model against the data it was fit to.
/// avg_nonzeros counts entries strictly above tau, averaged over components;
/// avg_cosine / max_cosine summarize pairwise column cosine similarity per
/// mode (a pair involving an all-zero column scores 0).
struct FitStatistics {
  double kl_divergence = 0.0;
  std::array<double, 3> avg_nonzeros{0.0, 0.0, 0.0};
  std::array<double, 3> avg_cosine{0.0, 0.0, 0.0};
  std::array<double, 3> max_cosine{0.0, 0.0, 0.0};
};

namespace detail {

inline double column_cosine(const FactorMatrix& f, Index p, Index r) {
  const double np = f.col(p).norm();
  const double nr = f.col(r).norm();
  if (np == 0.0 || nr == 0.0) return 0.0;
  return f.col(p).dot(f.col(r)) / (np * nr);
}

}  // namespace detail

inline FitStatistics fit_statistics(const SparseCountTensor& x, const KruskalModel& m,
                                    double tau) {
  if (!(tau >= 0.0)) throw validation_error("fit_statistics: tau must be nonnegative");
  detail::check_same_shape(x, m);
  FitStatistics out;
  out.kl_divergence = kl_loss(x, m);
  const Index R = m.rank();
  for (int mode = 1; mode <= 3; ++mode) {
    const auto& f = m.factor(mode);
    const auto idx = static_cast<std::size_t>(mode - 1);
    double nnz = 0.0;
    for (Index r = 0; r < R; ++r)
      nnz += static_cast<double>((f.col(r).array() > tau).count());
    out.avg_nonzeros[idx] = nnz / static_cast<double>(R);
    if (R < 2) continue;  // no pairs: cosines stay 0
    double acc = 0.0;
    double best = -1.0;
    for (Index r = 0; r < R; ++r)
      for (Index p = 0; p < r; ++p) {
        const double cos = detail::column_cosine(f, p, r);
        acc += cos;
        best = std::max(best, cos);
      }
    const double n_pairs = static_cast<double>(R) * static_cast<double>(R - 1) / 2.0;
    out.avg_cosine[idx] = acc / n_pairs;
    out.max_cosine[idx] = best;
  }
  return out;
}

/// Percentage of flagged pairs (j, k) for which some component is supported
/// on both sides: B(j, r) > tau and C(k, r) > tau. Empty matrix scores 0.
inline double cannot_link_violation_pct(const KruskalModel& m,
                                        const CannotLinkMatrix& links, double tau) {
  if (!(tau >= 0.0))
    throw validation_error("cannot_link_violation_pct: tau must be nonnegative");
  const auto& b = m.factor(2);
  const auto& c = m.factor(3);
  if (b.rows() != links.rows() || c.rows() != links.cols())
    throw validation_error(
        "cannot_link_violation_pct: link matrix dimensions do not match");
  if (links.size() == 0) return 0.0;
  Index violated = 0;
  for (const auto& [j, k] : links.pairs()) {
    for (Index r = 0; r < m.rank(); ++r) {
      if (b(j, r) > tau && c(k, r) > tau) {
        ++violated;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(violated) / static_cast<double>(links.size());
}

}  // namespace cplink
