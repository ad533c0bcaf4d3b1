#pragma once

// Choosing which k task factors to ask the worker about. Removing a factor
// from the design changes Trace((XᵀX + aI)⁻¹) of the retained columns; the
// factors whose removal lowers it most are the least well determined by the
// data, so their relative order is what the worker is asked for.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "elicit/linalg.hpp"
#include "elicit/random.hpp"

namespace elicit {

struct QuestionSet {
  /// Removed columns, in selection order; these are the questions.
  std::vector<Index> factor_indices;
  /// Trace objective of the retained columns.
  double retained_trace = 0.0;
};

namespace detail {

inline Matrix principal_submatrix(const Matrix& g, const std::vector<Index>& keep) {
  const auto k = static_cast<Index>(keep.size());
  Matrix out(k, k);
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) out(i, j) = g(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]);
  }
  return out;
}

inline Matrix design_gram(const Matrix& t_f) {
  detail::require_finite(t_f, "question selector: task factors");
  return t_f.rows() > 0 ? gram(t_f) : Matrix(Matrix::Zero(t_f.cols(), t_f.cols()));
}

}  // namespace detail

/// Trace objective of the columns left after removing `removed`; 0 when nothing is retained.
inline double retained_trace(const Matrix& t_f, const std::vector<Index>& removed, double alpha) {
  std::vector<char> gone(static_cast<std::size_t>(t_f.cols()), 0);
  for (Index r : removed) {
    if (r < 0 || r >= t_f.cols()) throw DomainError("retained_trace: factor index out of range");
    gone[static_cast<std::size_t>(r)] = 1;
  }
  std::vector<Index> keep;
  for (Index j = 0; j < t_f.cols(); ++j) {
    if (!gone[static_cast<std::size_t>(j)]) keep.push_back(j);
  }
  if (keep.empty()) return 0.0;
  return trace_inverse_of_gram(detail::principal_submatrix(detail::design_gram(t_f), keep), alpha);
}

struct SelectorOptions {
  /// Score removals with the rank-one downdate of the retained inverse when
  /// that inverse exists; otherwise every candidate is refactorized.
  bool use_downdates = true;
};

/// Backward-greedy k-ExFactor selection.
inline QuestionSet k_exfactor(const Matrix& t_f, std::size_t k, double alpha, SelectorOptions options = {}) {
  const Index m = t_f.cols();
  if (!(alpha >= 0.0)) throw DomainError("k_exfactor: alpha must be nonnegative");
  if (static_cast<Index>(k) >= m) {
    throw DomainError("k_exfactor: k = " + std::to_string(k) + " must be smaller than the " + std::to_string(m) +
                      " factors");
  }
  const Matrix g = detail::design_gram(t_f);
  std::vector<Index> keep(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) keep[static_cast<std::size_t>(j)] = j;

  QuestionSet out;
  out.retained_trace = trace_inverse_of_gram(g, alpha);
  for (std::size_t round = 0; round < k; ++round) {
    const Matrix sub = detail::principal_submatrix(g, keep);
    const auto size = static_cast<Index>(keep.size());
    std::vector<double> scores(keep.size(), kInfiniteObjective);

    std::optional<Matrix> lower;
    if (options.use_downdates) {
      Matrix reg = sub;
      reg.diagonal().array() += alpha;
      lower = cholesky_lower(reg, singularity_threshold(sub, alpha));
    }
    if (lower) {
      // tr((A without j)⁻¹) = tr(A⁻¹) - ||A⁻¹e_j||² / (A⁻¹)_jj
      const Matrix linv = lower->triangularView<Eigen::Lower>().solve(Matrix(Matrix::Identity(size, size)));
      const Matrix inv = linv.transpose() * linv;
      const double trace = inv.trace();
      for (Index j = 0; j < size; ++j) {
        const double pivot = inv(j, j);
        if (pivot > 0.0 && std::isfinite(pivot)) {
          scores[static_cast<std::size_t>(j)] = trace - inv.col(j).squaredNorm() / pivot;
        }
      }
    }
    for (Index j = 0; j < size; ++j) {
      if (lower && !is_infinite_objective(scores[static_cast<std::size_t>(j)])) continue;
      std::vector<Index> rest;
      rest.reserve(keep.size() - 1);
      for (Index i = 0; i < size; ++i) {
        if (i != j) rest.push_back(i);
      }
      scores[static_cast<std::size_t>(j)] = trace_inverse_of_gram(detail::principal_submatrix(sub, rest), alpha);
    }

    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.size(); ++j) {
      if (improves_on(scores[j], scores[best])) best = j;
    }
    if (is_infinite_objective(scores[best])) {
      throw SingularityError("k_exfactor: every candidate removal leaves a singular Gram; use alpha > 0", 0,
                             static_cast<long>(size - 1));
    }
    out.factor_indices.push_back(keep[best]);
    out.retained_trace = scores[best];
    keep.erase(keep.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return out;
}

/// Binomial coefficient, saturating at `cap + 1`.
inline std::uint64_t bounded_binomial(std::uint64_t n, std::uint64_t k, std::uint64_t cap) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t result = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    result = result * (n - k + i) / i;
    if (result > cap) return cap + 1;
  }
  return result;
}

inline constexpr std::uint64_t kBruteForceBudget = 1'000'000;

/// Exhaustive minimum of the retained trace over all k-subsets of removed
/// factors; ties go to the lexicographically smallest removed set.
inline QuestionSet brute_force_selector(const Matrix& t_f, std::size_t k, double alpha) {
  const Index m = t_f.cols();
  if (!(alpha >= 0.0)) throw DomainError("brute_force_selector: alpha must be nonnegative");
  if (static_cast<Index>(k) >= m) throw DomainError("brute_force_selector: k must be smaller than the factor count");
  const std::uint64_t count = bounded_binomial(static_cast<std::uint64_t>(m), k, kBruteForceBudget);
  if (count > kBruteForceBudget) {
    throw SizeError("brute_force_selector: C(" + std::to_string(m) + ", " + std::to_string(k) +
                    ") subsets exceed the budget of 1000000");
  }
  const Matrix g = detail::design_gram(t_f);
  std::vector<Index> removed(k);
  for (std::size_t i = 0; i < k; ++i) removed[i] = static_cast<Index>(i);

  QuestionSet best;
  bool have = false;
  while (true) {
    std::vector<Index> keep;
    std::size_t r = 0;
    for (Index j = 0; j < m; ++j) {
      if (r < k && removed[r] == j) {
        ++r;
      } else {
        keep.push_back(j);
      }
    }
    const double value = trace_inverse_of_gram(detail::principal_submatrix(g, keep), alpha);
    if (!have || improves_on(value, best.retained_trace)) {
      best.factor_indices = removed;
      best.retained_trace = value;
      have = true;
    }
    // next combination in lexicographic order
    std::size_t i = k;
    while (i > 0 && removed[i - 1] == m - static_cast<Index>(k - i + 1)) --i;
    if (i == 0) break;
    ++removed[i - 1];
    for (std::size_t j = i; j < k; ++j) removed[j] = removed[j - 1] + 1;
  }
  if (k > 0 && is_infinite_objective(best.retained_trace)) {
    throw SingularityError("brute_force_selector: every subset leaves a singular Gram; use alpha > 0", 0,
                           static_cast<long>(m - static_cast<Index>(k)));
  }
  return best;
}

/// k uniformly random factors; the retained trace is computed for reporting.
inline QuestionSet k_random(const Matrix& t_f, std::size_t k, double alpha, std::uint64_t seed) {
  const auto m = static_cast<std::size_t>(t_f.cols());
  if (k > m) throw DomainError("k_random: k = " + std::to_string(k) + " exceeds " + std::to_string(m) + " factors");
  Rng rng(seed);
  QuestionSet out;
  for (std::size_t i : sample_without_replacement(m, k, rng)) out.factor_indices.push_back(static_cast<Index>(i));
  out.retained_trace = retained_trace(t_f, out.factor_indices, alpha);
  return out;
}

}  // namespace elicit
