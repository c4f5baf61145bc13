#ifndef HABIT_FEATURES_HPP
#define HABIT_FEATURES_HPP

// Dense primitives shared by every stage: token-row normalization, mean
// pooling, similarity matrices and the row-wise softmax family.

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "habit/error.hpp"

namespace habit {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Q x D token embeddings with unit-norm rows.
using TokenFeatureMatrix = Matrix<double>;
/// Entry (b, j) is the cosine between query b and target j.
using SimilarityMatrix = Matrix<double>;

inline constexpr double kMinNorm = 1e-12;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.array().isFinite().all();
}

template <typename Derived>
Matrix<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Scalar norm = m.row(r).norm();
    // Negated comparison so NaN norms are rejected too.
    if (!(norm >= Scalar(kMinNorm)) || !std::isfinite(norm)) {
      throw ZeroRowError("row " + std::to_string(r) + " has norm below 1e-12 or is not finite");
    }
    out.row(r) = m.row(r) / norm;
  }
  return out;
}

/// Mean over token rows followed by L2 normalization.
template <typename Derived>
Vector<typename Derived::Scalar> pool(const Eigen::MatrixBase<Derived>& f) {
  using Scalar = typename Derived::Scalar;
  if (f.rows() < 1) throw ZeroRowError("cannot pool an empty token matrix");
  const Vector<Scalar> mean = f.colwise().mean().transpose();
  const Scalar norm = mean.norm();
  if (!(norm >= Scalar(kMinNorm))) {
    throw ZeroRowError("pooled mean vector has norm below 1e-12");
  }
  return mean / norm;
}

/// `queries` and `targets` hold one pooled vector per row.
template <typename DerivedQ, typename DerivedT>
Matrix<typename DerivedQ::Scalar> similarity_matrix(const Eigen::MatrixBase<DerivedQ>& queries,
                                                    const Eigen::MatrixBase<DerivedT>& targets) {
  if (queries.cols() != targets.cols()) {
    throw DimensionMismatchError("similarity_matrix: query dim " + std::to_string(queries.cols()) +
                                 " != target dim " + std::to_string(targets.cols()));
  }
  return queries * targets.transpose();
}

/// Numerically stable log(sum(exp(x))).
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  const auto peak = x.maxCoeff();
  return peak + std::log((x.array() - peak).exp().sum());
}

template <typename Derived>
RowVector<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  const auto lse = log_sum_exp(logits);
  return (logits.array() - lse).matrix().reshaped().transpose();
}

template <typename Derived>
RowVector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  return log_softmax(logits).array().exp().matrix();
}

}  // namespace habit

#endif  // HABIT_FEATURES_HPP
