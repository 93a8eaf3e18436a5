#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "cplink/errors.hpp"

namespace cplink {

/// Every stochastic routine in the library draws from this engine so a seed
/// pins down results bit-for-bit. Distribution transforms live here rather
/// than in <random> because the standard leaves those implementation-defined.
using Rng = std::mt19937_64;

/// Uniform in [0, 1), from the top 53 bits of one engine draw.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform in (0, 1].
inline double uniform_open_closed(Rng& rng) { return 1.0 - uniform_unit(rng); }

/// Uniform in [lo, hi).
inline double uniform_range(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(rng);
}

/// Unbiased uniform integer in [0, bound), rejection-sampled.
inline std::uint64_t bounded_uint(Rng& rng, std::uint64_t bound) {
  if (bound == 0) throw validation_error("bounded_uint: bound must be positive");
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = rng();
    if (r >= threshold) return r % bound;
  }
}

namespace detail {

// Knuth inversion; caller keeps mean small enough that exp(-mean) has slack.
inline std::int64_t poisson_inversion(Rng& rng, double mean) {
  const double limit = std::exp(-mean);
  std::int64_t k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= uniform_unit(rng);
  } while (p > limit);
  return k - 1;
}

}  // namespace detail

/// Poisson sample. Means above 30 are split additively (Poisson(a + b) is the
/// sum of independent Poisson(a) and Poisson(b)) so the inversion loop stays
/// short and exp(-mean) never underflows.
inline std::int64_t poisson(Rng& rng, double mean) {
  if (!std::isfinite(mean) || mean < 0.0)
    throw validation_error("poisson: mean must be finite and nonnegative");
  if (mean == 0.0) return 0;
  std::int64_t total = 0;
  while (mean > 30.0) {
    total += detail::poisson_inversion(rng, 16.0);
    mean -= 16.0;
  }
  return total + detail::poisson_inversion(rng, mean);
}

/// k distinct indices from [0, n), sorted ascending. Partial Fisher-Yates.
inline std::vector<std::int64_t> sample_without_replacement(Rng& rng,
                                                            std::int64_t n,
                                                            std::int64_t k) {
  if (n < 0 || k < 0 || k > n)
    throw validation_error("sample_without_replacement: need 0 <= k <= n");
  std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), std::int64_t{0});
  for (std::int64_t i = 0; i < k; ++i) {
    const auto j =
        i + static_cast<std::int64_t>(bounded_uint(rng, static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Draws indices with probability proportional to fixed nonnegative weights.
class CategoricalSampler {
 public:
  explicit CategoricalSampler(std::span<const double> weights) {
    if (weights.empty())
      throw validation_error("CategoricalSampler: weights must be nonempty");
    cumulative_.resize(weights.size());
    double run = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!(weights[i] >= 0.0))
        throw validation_error("CategoricalSampler: weights must be nonnegative");
      run += weights[i];
      cumulative_[i] = run;
    }
    if (!(run > 0.0))
      throw validation_error("CategoricalSampler: total weight must be positive");
  }

  std::int64_t sample(Rng& rng) const {
    const double u = uniform_unit(rng) * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto idx = static_cast<std::size_t>(it - cumulative_.begin());
    return static_cast<std::int64_t>(std::min(idx, cumulative_.size() - 1));
  }

 private:
  std::vector<double> cumulative_;
};

}  // namespace cplink
