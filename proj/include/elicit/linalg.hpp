#pragma once

// Dense primitives shared by every other module: Gram matrices, regularized
// normal-equation solves and the trace of the inverse Gram.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "elicit/errors.hpp"

namespace elicit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Objective value assigned to rank-deficient candidates. Compares greater
/// than every finite objective so greedy loops simply never pick it.
inline constexpr double kInfiniteObjective = std::numeric_limits<double>::infinity();

/// Relative pivot threshold below which a Gram matrix counts as singular.
inline constexpr double kSingularityTolerance = 1e-10;

inline bool is_infinite_objective(double value) { return std::isinf(value) && value > 0; }

/// Strictly better than `incumbent` beyond a relative tie tolerance, so near
/// ties resolve to the earlier (lower) index.
inline bool improves_on(double value, double incumbent) {
  if (is_infinite_objective(incumbent)) return !is_infinite_objective(value);
  return value < incumbent - 1e-12 * std::abs(incumbent);
}

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw DomainError(std::string(what) + " contains non-finite entries");
}

inline void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw DomainError(std::string(what) + " contains non-finite entries");
}

}  // namespace detail

/// MᵀM.
inline Matrix gram(const Matrix& m) {
  if (m.size() == 0) throw DimensionError("gram: empty matrix");
  detail::require_finite(m, "gram: matrix");
  Matrix g = Matrix::Zero(m.cols(), m.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(m.transpose());
  return g.selfadjointView<Eigen::Lower>();
}

/// Pivot below which a regularized Gram `gram + alpha I` is treated as singular.
/// With alpha > 0 the matrix is positive definite by construction, so only a
/// non-positive pivot (a rounding artefact) is rejected.
inline double singularity_threshold(const Matrix& gram_matrix, double alpha) {
  if (alpha > 0.0) return 0.0;
  const double scale = gram_matrix.size() == 0 ? 0.0 : gram_matrix.diagonal().maxCoeff();
  return kSingularityTolerance * std::max(scale, 0.0);
}

/// Cholesky factor (lower) of a symmetric matrix, or nullopt when some pivot
/// falls at or below `threshold`.
inline std::optional<Matrix> cholesky_lower(const Matrix& a, double threshold) {
  const Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    double pivot = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(pivot > threshold)) return std::nullopt;
    const double root = std::sqrt(pivot);
    l(j, j) = root;
    if (j + 1 < n) {
      l.col(j).tail(n - j - 1) =
          (a.col(j).tail(n - j - 1) - l.bottomRows(n - j - 1).leftCols(j) * l.row(j).head(j).transpose()) / root;
    }
  }
  return l;
}

/// Numerical rank of a symmetric PSD matrix under the shared tolerance.
inline long numerical_rank(const Matrix& gram_matrix) {
  if (gram_matrix.size() == 0) return 0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram_matrix, Eigen::EigenvaluesOnly);
  const double cut = kSingularityTolerance * std::max(gram_matrix.diagonal().maxCoeff(), 0.0);
  return static_cast<long>((eig.eigenvalues().array() > cut).count());
}

/// Factorization of `MᵀM + alpha I` used for repeated solves against one design.
class RegularizedGram {
 public:
  /// Throws SingularityError when alpha = 0 and the Gram is rank deficient.
  RegularizedGram(const Matrix& gram_matrix, double alpha) {
    if (!(alpha >= 0.0)) throw DomainError("alpha must be nonnegative");
    Matrix a = gram_matrix;
    a.diagonal().array() += alpha;
    auto l = cholesky_lower(a, singularity_threshold(gram_matrix, alpha));
    if (!l) {
      const long rank = numerical_rank(gram_matrix);
      throw SingularityError("normal matrix is singular: rank " + std::to_string(rank) + " of " +
                                 std::to_string(gram_matrix.rows()) + " with alpha = 0",
                             rank, static_cast<long>(gram_matrix.rows()));
    }
    lower_ = std::move(*l);
  }

  Vector solve(const Vector& rhs) const {
    Vector y = lower_.triangularView<Eigen::Lower>().solve(rhs);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  Matrix solve(const Matrix& rhs) const {
    Matrix y = lower_.triangularView<Eigen::Lower>().solve(rhs);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  /// Explicit (MᵀM + alpha I)⁻¹; only for trace computations and downdates.
  Matrix inverse() const { return solve(Matrix(Matrix::Identity(size(), size()))); }

  /// Trace((MᵀM + alpha I)⁻¹) = ||L⁻¹||²_F.
  double trace_inverse() const {
    Matrix linv = lower_.triangularView<Eigen::Lower>().solve(Matrix(Matrix::Identity(size(), size())));
    return linv.squaredNorm();
  }

  Index size() const { return lower_.rows(); }
  const Matrix& lower() const { return lower_; }

 private:
  Matrix lower_;
};

/// w minimizing ||t_o - t_f w||² + alpha ||w||², via Cholesky of the
/// regularized Gram.
inline Vector ridge_solve(const Matrix& t_f, const Vector& t_o, double alpha) {
  if (t_f.rows() != t_o.size()) {
    throw DimensionError("ridge_solve: " + std::to_string(t_o.size()) + " outcomes for " +
                         std::to_string(t_f.rows()) + " rows");
  }
  if (t_f.cols() == 0) throw DimensionError("ridge_solve: matrix has no columns");
  detail::require_finite(t_o, "ridge_solve: outcomes");
  if (t_f.rows() == 0) return Vector::Zero(t_f.cols());
  RegularizedGram factor(gram(t_f), alpha);
  return factor.solve(Vector(t_f.transpose() * t_o));
}

/// Trace((MᵀM + alpha I)⁻¹) from a precomputed Gram; kInfiniteObjective when singular.
inline double trace_inverse_of_gram(const Matrix& gram_matrix, double alpha) {
  if (gram_matrix.cols() == 0) throw DimensionError("trace_inverse_gram: no columns");
  Matrix a = gram_matrix;
  a.diagonal().array() += alpha;
  auto l = cholesky_lower(a, singularity_threshold(gram_matrix, alpha));
  if (!l) return kInfiniteObjective;
  Matrix linv = l->triangularView<Eigen::Lower>().solve(Matrix(Matrix::Identity(a.rows(), a.cols())));
  return linv.squaredNorm();
}

inline double trace_inverse_gram(const Matrix& m, double alpha) {
  if (m.cols() == 0) throw DimensionError("trace_inverse_gram: matrix has no columns");
  if (!(alpha >= 0.0)) throw DomainError("alpha must be nonnegative");
  if (m.rows() == 0) return alpha > 0.0 ? static_cast<double>(m.cols()) / alpha : kInfiniteObjective;
  return trace_inverse_of_gram(gram(m), alpha);
}

}  // namespace elicit
