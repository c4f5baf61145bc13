#ifndef HABIT_MKE_HPP
#define HABIT_MKE_HPP

// Mutual knowledge estimation: token-level mutual information between a
// composed feature and a target feature, transition rates against an
// in-batch standard sample, and the resulting cleanliness estimates.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "habit/error.hpp"
#include "habit/features.hpp"

namespace habit {

/// Per-sample cleanliness values in (0, 1], batch-ordered.
using EstimationSequence = Vector<double>;

inline constexpr double kTransitionEpsilon = 1e-8;

namespace detail {

template <typename DerivedC, typename DerivedT>
void check_token_dims(const Eigen::MatrixBase<DerivedC>& f_c,
                      const Eigen::MatrixBase<DerivedT>& f_t) {
  if (f_c.cols() != f_t.cols()) {
    throw DimensionMismatchError("token embedding dims differ: " + std::to_string(f_c.cols()) +
                                 " vs " + std::to_string(f_t.cols()));
  }
  if (f_c.rows() < 1 || f_t.rows() < 1) {
    throw DimensionMismatchError("token matrices must have at least one row");
  }
}

/// log p(i, j) for the softmax-induced joint.
template <typename DerivedC, typename DerivedT>
Matrix<typename DerivedC::Scalar> log_joint(const Eigen::MatrixBase<DerivedC>& f_c,
                                            const Eigen::MatrixBase<DerivedT>& f_t,
                                            typename DerivedC::Scalar tau_mk) {
  check_token_dims(f_c, f_t);
  if (!(tau_mk > 0)) throw DomainError("tau_mk must be positive");
  Matrix<typename DerivedC::Scalar> logits = (f_c * f_t.transpose()) / tau_mk;
  const auto lse = log_sum_exp(logits.reshaped());
  logits.array() -= lse;
  return logits;
}

}  // namespace detail

/// Joint over (composed token i, target token j): softmax of all Q x Q
/// token dot products at temperature `tau_mk`.
template <typename DerivedC, typename DerivedT>
Matrix<typename DerivedC::Scalar> joint_distribution(const Eigen::MatrixBase<DerivedC>& f_c,
                                                     const Eigen::MatrixBase<DerivedT>& f_t,
                                                     typename DerivedC::Scalar tau_mk) {
  return detail::log_joint(f_c, f_t, tau_mk).array().exp().matrix();
}

/// Mutual information of the induced joint, with marginals taken as its
/// row and column sums.
template <typename DerivedC, typename DerivedT>
typename DerivedC::Scalar mutual_knowledge(const Eigen::MatrixBase<DerivedC>& f_c,
                                           const Eigen::MatrixBase<DerivedT>& f_t,
                                           typename DerivedC::Scalar tau_mk) {
  using Scalar = typename DerivedC::Scalar;
  const Matrix<Scalar> log_p = detail::log_joint(f_c, f_t, tau_mk);
  const Matrix<Scalar> p = log_p.array().exp().matrix();
  const Vector<Scalar> row_marginal = p.rowwise().sum();
  const RowVector<Scalar> col_marginal = p.colwise().sum();
  Scalar mi = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const Scalar log_r = std::log(row_marginal(i));
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (p(i, j) > 0) mi += p(i, j) * (log_p(i, j) - log_r - std::log(col_marginal(j)));
    }
  }
  // Mathematically nonnegative; strip rounding residue below zero.
  return std::max(Scalar(0), mi);
}

/// Index of the sample with the lowest unmasked diagonal InfoNCE loss
/// -log softmax(s_b / tau)_b. Ties go to the lowest index.
template <typename Derived>
Eigen::Index select_standard(const Eigen::MatrixBase<Derived>& sim, typename Derived::Scalar tau) {
  using Scalar = typename Derived::Scalar;
  Eigen::Index best = 0;
  Scalar best_loss = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index b = 0; b < sim.rows(); ++b) {
    const RowVector<Scalar> logits = sim.row(b) / tau;
    const Scalar loss = log_sum_exp(logits) - logits(b);
    if (loss < best_loss) {
      best_loss = loss;
      best = b;
    }
  }
  return best;
}

template <typename Scalar>
Scalar transition_rate(Scalar mk_standard, Scalar mk_sample) {
  return std::abs(mk_standard - mk_sample) / std::max(mk_standard, Scalar(kTransitionEpsilon));
}

/// The three deviations entering a cleanliness estimate.
template <typename Scalar>
struct TransitionRates {
  Scalar direct;          // (F_c, F_t)
  Scalar composed_cross;  // (F_c, F_t of the standard)
  Scalar target_cross;    // (F_t, F_c of the standard)
};

template <typename Scalar>
Scalar cleanliness_from_rates(const TransitionRates<Scalar>& tr) {
  return Scalar(1) / (Scalar(1) + tr.direct + std::abs(tr.composed_cross - tr.target_cross));
}

enum class TransitionMode {
  Relative,        // |MK_s - MK| / MK_s
  RawDifference,   // |MK_s - MK|
};

template <typename DerivedA, typename DerivedB, typename DerivedC, typename DerivedD>
TransitionRates<typename DerivedA::Scalar> transition_rates(
    const Eigen::MatrixBase<DerivedA>& f_c, const Eigen::MatrixBase<DerivedB>& f_t,
    const Eigen::MatrixBase<DerivedC>& f_c_std, const Eigen::MatrixBase<DerivedD>& f_t_std,
    typename DerivedA::Scalar tau_mk, TransitionMode mode = TransitionMode::Relative) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar mk_std = mutual_knowledge(f_c_std, f_t_std, tau_mk);
  const Scalar mk_direct = mutual_knowledge(f_c, f_t, tau_mk);
  const Scalar mk_composed = mutual_knowledge(f_c, f_t_std, tau_mk);
  const Scalar mk_target = mutual_knowledge(f_c_std, f_t, tau_mk);
  auto rate = [&](Scalar mk) {
    return mode == TransitionMode::Relative ? transition_rate(mk_std, mk) : std::abs(mk_std - mk);
  };
  return {rate(mk_direct), rate(mk_composed), rate(mk_target)};
}

template <typename DerivedA, typename DerivedB, typename DerivedC, typename DerivedD>
typename DerivedA::Scalar cleanliness(const Eigen::MatrixBase<DerivedA>& f_c,
                                      const Eigen::MatrixBase<DerivedB>& f_t,
                                      const Eigen::MatrixBase<DerivedC>& f_c_std,
                                      const Eigen::MatrixBase<DerivedD>& f_t_std,
                                      typename DerivedA::Scalar tau_mk,
                                      TransitionMode mode = TransitionMode::Relative) {
  return cleanliness_from_rates(transition_rates(f_c, f_t, f_c_std, f_t_std, tau_mk, mode));
}

/// Cleanliness of every sample against a given standard index.
inline EstimationSequence estimate_batch_against(std::span<const TokenFeatureMatrix> composed,
                                                 std::span<const TokenFeatureMatrix> targets,
                                                 Eigen::Index standard, double tau_mk,
                                                 TransitionMode mode = TransitionMode::Relative) {
  if (composed.size() != targets.size()) {
    throw DimensionMismatchError("estimate_batch: composed and target counts differ");
  }
  const auto batch = static_cast<Eigen::Index>(composed.size());
  if (standard < 0 || standard >= batch) throw DomainError("standard index out of range");
  const TokenFeatureMatrix& c_std = composed[standard];
  const TokenFeatureMatrix& t_std = targets[standard];
  EstimationSequence e(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    e(b) = cleanliness(composed[b], targets[b], c_std, t_std, tau_mk, mode);
  }
  return e;
}

inline EstimationSequence estimate_batch(std::span<const TokenFeatureMatrix> composed,
                                         std::span<const TokenFeatureMatrix> targets,
                                         const SimilarityMatrix& sim, double tau, double tau_mk) {
  if (sim.rows() != static_cast<Eigen::Index>(composed.size()) || sim.cols() != sim.rows()) {
    throw DimensionMismatchError("estimate_batch: similarity matrix does not match batch size");
  }
  return estimate_batch_against(composed, targets, select_standard(sim, tau), tau_mk);
}

}  // namespace habit

#endif  // HABIT_MKE_HPP
