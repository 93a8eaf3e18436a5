#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cplink/errors.hpp"
#include "cplink/objective.hpp"
#include "cplink/tensor.hpp"

namespace cplink {

/// Document collection over two disjoint vocabularies (row terms and column
/// terms). Each document stores the distinct terms it mentions, encoded as
/// row index j or n_rows + k for column index k. Only presence matters.
class Corpus {
 public:
  static Corpus from_tokens(std::vector<std::string> row_vocab,
                            std::vector<std::string> col_vocab,
                            const std::vector<std::vector<std::string>>& docs) {
    Corpus c;
    c.row_vocab_ = std::move(row_vocab);
    c.col_vocab_ = std::move(col_vocab);
    if (c.row_vocab_.empty() || c.col_vocab_.empty())
      throw validation_error("Corpus: vocabularies must be nonempty");
    if (docs.empty()) throw validation_error("Corpus: need at least one document");

    std::unordered_map<std::string, Index> lookup;
    lookup.reserve(c.row_vocab_.size() + c.col_vocab_.size());
    for (std::size_t j = 0; j < c.row_vocab_.size(); ++j)
      if (!lookup.emplace(c.row_vocab_[j], static_cast<Index>(j)).second)
        throw validation_error("Corpus: duplicate row vocabulary term '" +
                               c.row_vocab_[j] + "'");
    const Index n_rows = static_cast<Index>(c.row_vocab_.size());
    for (std::size_t k = 0; k < c.col_vocab_.size(); ++k)
      if (!lookup.emplace(c.col_vocab_[k], n_rows + static_cast<Index>(k)).second)
        throw validation_error("Corpus: vocabularies overlap on term '" +
                               c.col_vocab_[k] + "'");

    c.docs_.reserve(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
      std::vector<Index> encoded;
      encoded.reserve(docs[d].size());
      for (const auto& term : docs[d]) {
        const auto it = lookup.find(term);
        if (it == lookup.end())
          throw validation_error("Corpus: document " + std::to_string(d) +
                                 " uses unknown term '" + term + "'");
        encoded.push_back(it->second);
      }
      std::sort(encoded.begin(), encoded.end());
      encoded.erase(std::unique(encoded.begin(), encoded.end()), encoded.end());
      c.docs_.push_back(std::move(encoded));
    }
    return c;
  }

  Index n_rows() const { return static_cast<Index>(row_vocab_.size()); }
  Index n_cols() const { return static_cast<Index>(col_vocab_.size()); }
  Index n_docs() const { return static_cast<Index>(docs_.size()); }
  const std::vector<std::string>& row_vocab() const { return row_vocab_; }
  const std::vector<std::string>& col_vocab() const { return col_vocab_; }
  const std::vector<std::vector<Index>>& docs() const { return docs_; }

 private:
  Corpus() = default;
  std::vector<std::string> row_vocab_, col_vocab_;
  std::vector<std::vector<Index>> docs_;
};

/// Document-frequency table backing the lift statistic:
/// lift(j, k) = n_docs * n_jk / (n_j * n_k), undefined when either marginal
/// count is zero. Joint counts are stored sparsely; absent means zero.
class LiftTable {
 public:
  LiftTable(Index rows, Index cols, std::int64_t n_docs,
            std::vector<std::int64_t> row_count, std::vector<std::int64_t> col_count,
            std::unordered_map<std::uint64_t, std::int64_t> joint)
      : rows_(rows),
        cols_(cols),
        n_docs_(n_docs),
        row_count_(std::move(row_count)),
        col_count_(std::move(col_count)),
        joint_(std::move(joint)) {}

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  std::int64_t n_docs() const { return n_docs_; }

  std::int64_t row_count(Index j) const { return row_count_.at(static_cast<std::size_t>(j)); }
  std::int64_t col_count(Index k) const { return col_count_.at(static_cast<std::size_t>(k)); }

  std::int64_t joint_count(Index j, Index k) const {
    check_bounds(j, k);
    const auto it = joint_.find(key(j, k));
    return it == joint_.end() ? 0 : it->second;
  }

  /// Empty optional when either marginal count is zero (lift undefined).
  std::optional<double> lift(Index j, Index k) const {
    check_bounds(j, k);
    const auto nj = row_count_[static_cast<std::size_t>(j)];
    const auto nk = col_count_[static_cast<std::size_t>(k)];
    if (nj == 0 || nk == 0) return std::nullopt;
    return static_cast<double>(n_docs_) * static_cast<double>(joint_count(j, k)) /
           (static_cast<double>(nj) * static_cast<double>(nk));
  }

 private:
  void check_bounds(Index j, Index k) const {
    if (j < 0 || j >= rows_ || k < 0 || k >= cols_)
      throw validation_error("LiftTable: index out of bounds");
  }
  std::uint64_t key(Index j, Index k) const {
    return static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(cols_) +
           static_cast<std::uint64_t>(k);
  }

  Index rows_, cols_;
  std::int64_t n_docs_;
  std::vector<std::int64_t> row_count_, col_count_;
  std::unordered_map<std::uint64_t, std::int64_t> joint_;
};

/// Document-frequency counting pass. A term counts once per document no
/// matter how often it appears, so the table depends only on presence sets.
inline LiftTable compute_lift(const Corpus& corpus) {
  const Index rows = corpus.n_rows();
  const Index cols = corpus.n_cols();
  std::vector<std::int64_t> row_count(static_cast<std::size_t>(rows), 0);
  std::vector<std::int64_t> col_count(static_cast<std::size_t>(cols), 0);
  std::unordered_map<std::uint64_t, std::int64_t> joint;
  for (const auto& doc : corpus.docs()) {
    // encoded docs are sorted, so row terms come before column terms
    const auto split = std::lower_bound(doc.begin(), doc.end(), rows);
    for (auto it = doc.begin(); it != split; ++it)
      ++row_count[static_cast<std::size_t>(*it)];
    for (auto it = split; it != doc.end(); ++it)
      ++col_count[static_cast<std::size_t>(*it - rows)];
    for (auto jt = doc.begin(); jt != split; ++jt)
      for (auto kt = split; kt != doc.end(); ++kt)
        ++joint[static_cast<std::uint64_t>(*jt) * static_cast<std::uint64_t>(cols) +
                static_cast<std::uint64_t>(*kt - rows)];
  }
  return LiftTable(rows, cols, corpus.n_docs(), std::move(row_count),
                   std::move(col_count), std::move(joint));
}

/// Treatment of pairs whose lift is undefined (a term never observed):
/// exclude leaves them unconstrained, constrain flags them.
enum class UndefinedLift { exclude, constrain };

/// Flag the pairs whose lift is strictly below alpha. Pairs at exactly alpha
/// stay unconstrained.
inline CannotLinkMatrix build_cannot_link(const LiftTable& lifts, double alpha,
                                          UndefinedLift policy = UndefinedLift::exclude) {
  if (!(alpha > 0.0)) throw validation_error("build_cannot_link: alpha must be positive");
  std::vector<std::pair<Index, Index>> pairs;
  for (Index j = 0; j < lifts.rows(); ++j) {
    for (Index k = 0; k < lifts.cols(); ++k) {
      const auto lift = lifts.lift(j, k);
      const bool flagged =
          lift ? (*lift < alpha) : (policy == UndefinedLift::constrain);
      if (flagged) pairs.emplace_back(j, k);
    }
  }
  return CannotLinkMatrix(lifts.rows(), lifts.cols(), std::move(pairs));
}

}  // namespace cplink
