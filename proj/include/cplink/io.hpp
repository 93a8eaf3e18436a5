#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cplink/errors.hpp"
#include "cplink/evaluation.hpp"
#include "cplink/objective.hpp"
#include "cplink/linkmatrix.hpp"
#include "cplink/solver.hpp"
#include "cplink/synth.hpp"
#include "cplink/tensor.hpp"

namespace cplink {

/// Shortest exact decimal form of a double: 17 significant digits round-trip
/// through strtod to the identical bit pattern, which is what keeps report
/// files byte-stable across runs.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path + ": cannot open for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error(path + ": cannot open for writing");
  return out;
}

inline io_error parse_error(const std::string& path, std::size_t line_no,
                            const std::string& message) {
  return io_error(path + ":" + std::to_string(line_no) + ": " + message);
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(std::move(tok));
  return out;
}

inline std::int64_t parse_int(const std::string& tok, const std::string& path,
                              std::size_t line_no) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(tok.c_str(), &end, 10);
  if (errno != 0 || end == tok.c_str() || *end != '\0')
    throw parse_error(path, line_no, "expected an integer, got '" + tok + "'");
  return v;
}

inline double parse_double(const std::string& tok, const std::string& path,
                           std::size_t line_no) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (errno != 0 || end == tok.c_str() || *end != '\0')
    throw parse_error(path, line_no, "expected a number, got '" + tok + "'");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// 64-bit FNV-1a of a byte string, printed as fixed-width hex. Stamped into
/// reports so a result can be traced back to the exact configuration.
inline std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --------------------------------------------------------------------------
// tensor file: "dims I1 I2 I3" header, then one "i j k count" line per entry
// (0-based indices). Integer content round-trips bit-exactly.

inline void write_tensor(const std::string& path, const SparseCountTensor& x) {
  auto out = detail::open_for_write(path);
  out << "dims " << x.dim(1) << ' ' << x.dim(2) << ' ' << x.dim(3) << '\n';
  for (const auto& e : x.entries())
    out << e.i << ' ' << e.j << ' ' << e.k << ' ' << e.count << '\n';
}

inline SparseCountTensor read_tensor(const std::string& path) {
  const auto lines = detail::read_lines(path);
  if (lines.empty()) throw detail::parse_error(path, 1, "missing 'dims' header");
  const auto header = detail::split_ws(lines[0]);
  if (header.size() != 4 || header[0] != "dims")
    throw detail::parse_error(path, 1, "header must be 'dims I1 I2 I3'");
  Shape3 shape{detail::parse_int(header[1], path, 1),
               detail::parse_int(header[2], path, 1),
               detail::parse_int(header[3], path, 1)};
  std::vector<TensorEntry> entries;
  entries.reserve(lines.size() - 1);
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto toks = detail::split_ws(lines[n]);
    if (toks.size() != 4)
      throw detail::parse_error(path, n + 1, "expected 'i j k count'");
    entries.push_back({detail::parse_int(toks[0], path, n + 1),
                       detail::parse_int(toks[1], path, n + 1),
                       detail::parse_int(toks[2], path, n + 1),
                       detail::parse_int(toks[3], path, n + 1)});
  }
  try {
    return SparseCountTensor(shape, std::move(entries));
  } catch (const validation_error& e) {
    throw io_error(path + ": " + e.what());
  }
}

// --------------------------------------------------------------------------
// link file: "dims I2 I3" header, then one "j k" line per flagged pair.

inline void write_links(const std::string& path, const CannotLinkMatrix& m) {
  auto out = detail::open_for_write(path);
  out << "dims " << m.rows() << ' ' << m.cols() << '\n';
  for (const auto& [j, k] : m.pairs()) out << j << ' ' << k << '\n';
}

inline CannotLinkMatrix read_links(const std::string& path) {
  const auto lines = detail::read_lines(path);
  if (lines.empty()) throw detail::parse_error(path, 1, "missing 'dims' header");
  const auto header = detail::split_ws(lines[0]);
  if (header.size() != 3 || header[0] != "dims")
    throw detail::parse_error(path, 1, "header must be 'dims I2 I3'");
  const Index rows = detail::parse_int(header[1], path, 1);
  const Index cols = detail::parse_int(header[2], path, 1);
  std::vector<std::pair<Index, Index>> pairs;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto toks = detail::split_ws(lines[n]);
    if (toks.size() != 2) throw detail::parse_error(path, n + 1, "expected 'j k'");
    pairs.emplace_back(detail::parse_int(toks[0], path, n + 1),
                       detail::parse_int(toks[1], path, n + 1));
  }
  try {
    return CannotLinkMatrix(rows, cols, std::move(pairs));
  } catch (const validation_error& e) {
    throw io_error(path + ": " + e.what());
  }
}

// --------------------------------------------------------------------------
// vocabulary: one term per line, line order defines the index.

inline std::vector<std::string> read_vocab(const std::string& path) {
  const auto lines = detail::read_lines(path);
  std::vector<std::string> vocab;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto toks = detail::split_ws(lines[n]);
    if (toks.size() != 1)
      throw detail::parse_error(path, n + 1, "expected exactly one term per line");
    vocab.push_back(toks[0]);
  }
  return vocab;
}

/// Corpus file: one document per line, whitespace-separated terms. An empty
/// line is an empty document.
inline Corpus read_corpus(const std::string& corpus_path,
                          const std::string& row_vocab_path,
                          const std::string& col_vocab_path) {
  auto row_vocab = read_vocab(row_vocab_path);
  auto col_vocab = read_vocab(col_vocab_path);
  const auto lines = detail::read_lines(corpus_path);
  std::vector<std::vector<std::string>> docs;
  docs.reserve(lines.size());
  for (const auto& line : lines) docs.push_back(detail::split_ws(line));
  try {
    return Corpus::from_tokens(std::move(row_vocab), std::move(col_vocab), docs);
  } catch (const validation_error& e) {
    throw io_error(corpus_path + ": " + e.what());
  }
}

// --------------------------------------------------------------------------
// labels: one "subject_index label" line per subject, each index exactly once.

inline void write_labels(const std::string& path, const std::vector<int>& labels) {
  auto out = detail::open_for_write(path);
  for (std::size_t i = 0; i < labels.size(); ++i)
    out << i << ' ' << labels[i] << '\n';
}

inline std::vector<int> read_labels(const std::string& path, Index n_subjects) {
  const auto lines = detail::read_lines(path);
  std::vector<int> labels(static_cast<std::size_t>(n_subjects), -1);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto toks = detail::split_ws(lines[n]);
    if (toks.size() != 2)
      throw detail::parse_error(path, n + 1, "expected 'subject_index label'");
    const Index idx = detail::parse_int(toks[0], path, n + 1);
    const std::int64_t y = detail::parse_int(toks[1], path, n + 1);
    if (idx < 0 || idx >= n_subjects)
      throw detail::parse_error(path, n + 1, "subject index out of range");
    if (y != 0 && y != 1)
      throw detail::parse_error(path, n + 1, "label must be 0 or 1");
    if (labels[static_cast<std::size_t>(idx)] != -1)
      throw detail::parse_error(path, n + 1, "duplicate subject index");
    labels[static_cast<std::size_t>(idx)] = static_cast<int>(y);
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == -1)
      throw io_error(path + ": no label for subject " + std::to_string(i));
  return labels;
}

// --------------------------------------------------------------------------
// model directory: one CSV per mode with a shared lambda header line, plus an
// optional bias file. Values are written with 17 significant digits, so
// write -> read -> write is byte-stable.

inline const char* factor_file_name(int mode) {
  switch (mode) {
    case 1: return "factor_patient.csv";
    case 2: return "factor_diagnosis.csv";
    case 3: return "factor_medication.csv";
    default: throw validation_error("factor_file_name: mode must be 1, 2, or 3");
  }
}

namespace detail {

inline void write_factor_csv(const std::string& path, const Eigen::VectorXd& weights,
                             const FactorMatrix& f) {
  auto out = open_for_write(path);
  out << "lambda";
  for (Index r = 0; r < weights.size(); ++r) out << ',' << fmt_double(weights[r]);
  out << '\n';
  for (Index i = 0; i < f.rows(); ++i) {
    for (Index r = 0; r < f.cols(); ++r) {
      if (r > 0) out << ',';
      out << fmt_double(f(i, r));
    }
    out << '\n';
  }
}

inline std::pair<Eigen::VectorXd, FactorMatrix> read_factor_csv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw parse_error(path, 1, "missing lambda header");
  const auto header = split_csv(lines[0]);
  if (header.size() < 2 || header[0] != "lambda")
    throw parse_error(path, 1, "header must be 'lambda,<w1>,...'");
  const Index rank = static_cast<Index>(header.size()) - 1;
  Eigen::VectorXd weights(rank);
  for (Index r = 0; r < rank; ++r)
    weights[r] = parse_double(header[static_cast<std::size_t>(r + 1)], path, 1);
  std::vector<std::vector<double>> rows;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto fields = split_csv(lines[n]);
    if (static_cast<Index>(fields.size()) != rank)
      throw parse_error(path, n + 1, "wrong number of columns");
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_double(f, path, n + 1));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw parse_error(path, 2, "factor matrix has no rows");
  FactorMatrix f(static_cast<Index>(rows.size()), rank);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index r = 0; r < rank; ++r)
      f(static_cast<Index>(i), r) = rows[i][static_cast<std::size_t>(r)];
  return {std::move(weights), std::move(f)};
}

inline void write_vector_line(std::ofstream& out, const char* name,
                              const Eigen::VectorXd& v) {
  out << name;
  for (Index i = 0; i < v.size(); ++i) out << ' ' << fmt_double(v[i]);
  out << '\n';
}

}  // namespace detail

inline void write_model(const std::string& dir, const KruskalModel& model) {
  std::filesystem::create_directories(dir);
  for (int mode = 1; mode <= 3; ++mode)
    detail::write_factor_csv(dir + "/" + factor_file_name(mode), model.weights,
                             model.factor(mode));
  const std::string bias_path = dir + "/bias.txt";
  if (model.bias) {
    auto out = detail::open_for_write(bias_path);
    out << "sigma " << fmt_double(model.bias->sigma) << '\n';
    detail::write_vector_line(out, "u1", model.bias->u1);
    detail::write_vector_line(out, "u2", model.bias->u2);
    detail::write_vector_line(out, "u3", model.bias->u3);
  } else {
    std::filesystem::remove(bias_path);
  }
}

inline KruskalModel read_model(const std::string& dir) {
  KruskalModel model;
  for (int mode = 1; mode <= 3; ++mode) {
    const std::string path = dir + "/" + factor_file_name(mode);
    auto [weights, factor] = detail::read_factor_csv(path);
    if (mode == 1) {
      model.weights = std::move(weights);
    } else if (weights.size() != model.weights.size() ||
               (weights.array() != model.weights.array()).any()) {
      throw io_error(path + ": lambda header disagrees with the other factor files");
    }
    model.factors[static_cast<std::size_t>(mode - 1)] = std::move(factor);
  }
  const std::string bias_path = dir + "/bias.txt";
  if (std::filesystem::exists(bias_path)) {
    const auto lines = detail::read_lines(bias_path);
    if (lines.size() < 4)
      throw detail::parse_error(bias_path, 1, "expected sigma plus three u lines");
    const auto sig = detail::split_ws(lines[0]);
    if (sig.size() != 2 || sig[0] != "sigma")
      throw detail::parse_error(bias_path, 1, "expected 'sigma <value>'");
    BiasTerm bias;
    bias.sigma = detail::parse_double(sig[1], bias_path, 1);
    for (int mode = 1; mode <= 3; ++mode) {
      const auto toks = detail::split_ws(lines[static_cast<std::size_t>(mode)]);
      const std::string expect = "u" + std::to_string(mode);
      if (toks.size() < 2 || toks[0] != expect)
        throw detail::parse_error(bias_path, static_cast<std::size_t>(mode) + 1,
                                  "expected '" + expect + " <values...>'");
      Eigen::VectorXd u(static_cast<Index>(toks.size()) - 1);
      for (std::size_t t = 1; t < toks.size(); ++t)
        u[static_cast<Index>(t - 1)] = detail::parse_double(
            toks[t], bias_path, static_cast<std::size_t>(mode) + 1);
      bias.u(mode) = std::move(u);
    }
    model.bias = std::move(bias);
  }
  const auto d = model.dims();
  if (model.bias && (model.bias->u1.size() != d[0] || model.bias->u2.size() != d[1] ||
                     model.bias->u3.size() != d[2]))
    throw io_error(dir + "/bias.txt: bias vector lengths disagree with the factors");
  return model;
}

// --------------------------------------------------------------------------
// flat "key value" report, written in the caller's order.

inline void write_report(const std::string& path,
                         const std::vector<std::pair<std::string, std::string>>& rows) {
  auto out = detail::open_for_write(path);
  for (const auto& [key, value] : rows) out << key << ' ' << value << '\n';
}

inline std::string report_to_string(
    const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ostringstream out;
  for (const auto& [key, value] : rows) out << key << ' ' << value << '\n';
  return out.str();
}

// --------------------------------------------------------------------------
// configuration: flat "key = value" lines, '#' starts a comment, unknown keys
// are rejected so typos cannot silently fall back to defaults.

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& path) {
    KeyValueConfig cfg;
    cfg.raw_text_ = read_file(path);
    std::istringstream stream(cfg.raw_text_);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(stream, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos)
        line.resize(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw detail::parse_error(path, line_no, "expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw detail::parse_error(path, line_no, "empty key");
      if (!cfg.values_.emplace(key, value).second)
        throw detail::parse_error(path, line_no, "duplicate key '" + key + "'");
    }
    cfg.path_ = path;
    return cfg;
  }

  const std::string& raw_text() const { return raw_text_; }
  const std::string& path() const { return path_; }

  bool has(const std::string& key) const {
    used_.insert(key);
    return values_.count(key) > 0;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : detail::parse_double(it->second, path_, 0);
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : detail::parse_int(it->second, path_, 0);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw io_error(path_ + ": key '" + key + "' must be true/false/1/0");
  }

  /// Call after reading every supported key; rejects anything else.
  void reject_unknown_keys() const {
    for (const auto& [key, value] : values_)
      if (used_.count(key) == 0)
        throw io_error(path_ + ": unknown configuration key '" + key + "'");
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
  std::string raw_text_;
  std::string path_;
};

}  // namespace cplink
