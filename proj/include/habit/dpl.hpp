#ifndef HABIT_DPL_HPP
#define HABIT_DPL_HPP

// Dual-consistency progressive learning: density-based outlier detection on
// cleanliness sequences, the chrono-synergia noise mask, and the three masked
// losses. Every loss has a `_with_grad` form that also returns dL/dS for the
// similarity matrix S; masks, estimates and history are treated as constants.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "habit/error.hpp"
#include "habit/features.hpp"
#include "habit/mke.hpp"

namespace habit {

/// m_b = 0 marks sample b as noise.
using NoiseMask = Eigen::Matrix<int, Eigen::Dynamic, 1>;
using OutlierSet = std::set<Eigen::Index>;

/// History of the previous visit to one fixed batch.
struct BatchMemory {
  std::int64_t batch_id = 0;
  std::optional<SimilarityMatrix> prev_similarity;
  std::optional<EstimationSequence> prev_estimates;
  std::optional<OutlierSet> prev_outliers;
  std::optional<NoiseMask> prev_mask;

  bool operator==(const BatchMemory&) const = default;
};

struct LossBreakdown {
  double rank = 0;
  double kl = 0;
  double soft = 0;
  double total = 0;
  double kappa = 0;
  double gamma = 0;
  double tau = 0;
};

template <typename Scalar>
struct LossAndGrad {
  Scalar value = 0;
  Matrix<Scalar> grad;  // dvalue / dS
};

inline NoiseMask all_ones_mask(Eigen::Index batch) { return NoiseMask::Ones(batch); }

/// max(2, ceil(0.1 * B)).
inline int default_min_pts(Eigen::Index batch) {
  return std::max<int>(2, static_cast<int>((batch + 9) / 10));
}

/// DBSCAN over scalar points with closed |x - y| <= eps neighbourhoods that
/// include the point itself. Returns the noise points: those that are neither
/// core nor within eps of a core point.
inline OutlierSet dbscan_1d(std::span<const double> values, double eps, int min_pts) {
  const auto n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  // Sliding window over the sorted points gives every neighbourhood size.
  std::vector<bool> core(n, false);
  std::size_t lo = 0, hi = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double x = values[order[k]];
    while (std::abs(x - values[order[lo]]) > eps) ++lo;
    if (hi < k) hi = k;
    while (hi + 1 < n && std::abs(values[order[hi + 1]] - x) <= eps) ++hi;
    if (static_cast<int>(hi - lo + 1) >= min_pts) core[k] = true;
  }

  // A non-core point is a border point iff its nearest core neighbour on
  // either side of the sorted order lies within eps.
  OutlierSet noise;
  std::optional<std::size_t> last_core;
  std::vector<std::optional<std::size_t>> prev_core(n), next_core(n);
  for (std::size_t k = 0; k < n; ++k) {
    prev_core[k] = last_core;
    if (core[k]) last_core = k;
  }
  last_core.reset();
  for (std::size_t k = n; k-- > 0;) {
    next_core[k] = last_core;
    if (core[k]) last_core = k;
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (core[k]) continue;
    const double x = values[order[k]];
    const bool reachable =
        (prev_core[k] && std::abs(x - values[order[*prev_core[k]]]) <= eps) ||
        (next_core[k] && std::abs(values[order[*next_core[k]]] - x) <= eps);
    if (!reachable) noise.insert(static_cast<Eigen::Index>(order[k]));
  }
  return noise;
}

inline OutlierSet dbscan_1d(const EstimationSequence& values, double eps, int min_pts) {
  return dbscan_1d(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())),
                   eps, min_pts);
}

/// Zero exactly where both passes flagged the sample; all ones on a first pass.
inline NoiseMask chrono_mask(const OutlierSet& current, const std::optional<OutlierSet>& previous,
                             Eigen::Index batch) {
  NoiseMask mask = all_ones_mask(batch);
  if (!previous) return mask;
  for (Eigen::Index b : current) {
    if (b < 0 || b >= batch) throw DomainError("outlier index " + std::to_string(b) + " out of range");
    if (previous->contains(b)) mask(b) = 0;
  }
  return mask;
}

template <typename Scalar>
Scalar dynamic_margin(Scalar e, Scalar m_base) {
  if (!(e >= Scalar(0) && e <= Scalar(1))) {
    throw DomainError("dynamic_margin: estimate " + std::to_string(static_cast<double>(e)) +
                      " outside [0, 1]");
  }
  return m_base * (std::pow(Scalar(10), e) - Scalar(1)) / Scalar(9);
}

namespace detail {

inline void check_square(const SimilarityMatrix& sim, const char* who) {
  if (sim.rows() != sim.cols()) {
    throw DimensionMismatchError(std::string(who) + ": similarity matrix must be square");
  }
}

inline void check_length(Eigen::Index got, Eigen::Index want, const char* who, const char* what) {
  if (got != want) {
    throw DimensionMismatchError(std::string(who) + ": " + what + " length " + std::to_string(got) +
                                 " != batch size " + std::to_string(want));
  }
}

}  // namespace detail

/// KL(softmax(s_now_b / tau) || softmax(s_prev_b / tau)) averaged over rows
/// kept by both masks; 0 when no row survives.
inline LossAndGrad<double> kl_consistency_with_grad(const SimilarityMatrix& sim_now,
                                                    const SimilarityMatrix& sim_prev,
                                                    const NoiseMask& mask_now,
                                                    const NoiseMask& mask_prev, double tau) {
  detail::check_square(sim_now, "kl_consistency");
  if (sim_prev.rows() != sim_now.rows() || sim_prev.cols() != sim_now.cols()) {
    throw DimensionMismatchError("kl_consistency: current and previous similarity shapes differ");
  }
  const Eigen::Index batch = sim_now.rows();
  detail::check_length(mask_now.size(), batch, "kl_consistency", "current mask");
  detail::check_length(mask_prev.size(), batch, "kl_consistency", "previous mask");

  LossAndGrad<double> out{0.0, SimilarityMatrix::Zero(batch, batch)};
  Eigen::Index retained = 0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    if (mask_now(b) == 0 || mask_prev(b) == 0) continue;
    ++retained;
    const RowVector<double> log_p = log_softmax(sim_now.row(b) / tau);
    const RowVector<double> log_q = log_softmax(sim_prev.row(b) / tau);
    const RowVector<double> p = log_p.array().exp().matrix();
    const RowVector<double> log_ratio = log_p - log_q;
    const double kl = p.dot(log_ratio);
    out.value += kl;
    out.grad.row(b) = (p.array() * (log_ratio.array() - kl)).matrix() / tau;
  }
  if (retained == 0) return out;
  out.value = std::max(0.0, out.value / static_cast<double>(retained));
  out.grad /= static_cast<double>(retained);
  return out;
}

inline double kl_consistency(const SimilarityMatrix& sim_now, const SimilarityMatrix& sim_prev,
                             const NoiseMask& mask_now, const NoiseMask& mask_prev, double tau) {
  return kl_consistency_with_grad(sim_now, sim_prev, mask_now, mask_prev, tau).value;
}

/// (1/B) sum_b m_b max_{j != b} [margin(e_b) + s_bj - s_bb]_+.
inline LossAndGrad<double> soft_margin_loss_with_grad(const SimilarityMatrix& sim,
                                                      const EstimationSequence& estimates,
                                                      const NoiseMask& mask, double m_base) {
  detail::check_square(sim, "soft_margin_loss");
  const Eigen::Index batch = sim.rows();
  detail::check_length(estimates.size(), batch, "soft_margin_loss", "estimates");
  detail::check_length(mask.size(), batch, "soft_margin_loss", "mask");

  LossAndGrad<double> out{0.0, SimilarityMatrix::Zero(batch, batch)};
  if (batch < 2) return out;
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    if (mask(b) == 0) continue;
    const double margin = dynamic_margin(estimates(b), m_base);
    Eigen::Index hardest = -1;
    double worst = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < batch; ++j) {
      if (j == b) continue;
      const double hinge = margin + sim(b, j) - sim(b, b);
      if (hinge > worst) {
        worst = hinge;
        hardest = j;
      }
    }
    if (worst > 0) {
      out.value += worst * inv_b;
      out.grad(b, hardest) += inv_b;
      out.grad(b, b) -= inv_b;
    }
  }
  return out;
}

inline double soft_margin_loss(const SimilarityMatrix& sim, const EstimationSequence& estimates,
                               const NoiseMask& mask, double m_base) {
  return soft_margin_loss_with_grad(sim, estimates, mask, m_base).value;
}

/// Complementary contrastive loss: with p_b = softmax(s_b / tau),
/// (1/B) sum_b m_b * mean_{j != b} -log(1 - p_bj).
inline LossAndGrad<double> robust_contrastive_loss_with_grad(const SimilarityMatrix& sim,
                                                             const NoiseMask& mask, double tau) {
  detail::check_square(sim, "robust_contrastive_loss");
  const Eigen::Index batch = sim.rows();
  detail::check_length(mask.size(), batch, "robust_contrastive_loss", "mask");
  if (batch < 2) throw DegenerateBatchError("robust_contrastive_loss needs at least two samples");

  LossAndGrad<double> out{0.0, SimilarityMatrix::Zero(batch, batch)};
  const double scale = 1.0 / (static_cast<double>(batch) * static_cast<double>(batch - 1));
  RowVector<double> logits(batch), excluded(batch), g(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    if (mask(b) == 0) continue;
    logits = sim.row(b) / tau;
    const double lse = log_sum_exp(logits);
    const RowVector<double> p = (logits.array() - lse).exp().matrix();
    for (Eigen::Index j = 0; j < batch; ++j) {
      if (j == b) {
        g(j) = 0;
        continue;
      }
      // log(1 - p_j) = logsumexp over k != j minus the full logsumexp.
      excluded = logits;
      excluded(j) = -std::numeric_limits<double>::infinity();
      const double log_complement = log_sum_exp(excluded) - lse;
      out.value -= scale * log_complement;
      g(j) = scale * std::exp(-log_complement);
    }
    const double pg = p.dot(g);
    out.grad.row(b) = (p.array() * (g.array() - pg)).matrix() / tau;
  }
  return out;
}

inline double robust_contrastive_loss(const SimilarityMatrix& sim, const NoiseMask& mask,
                                      double tau) {
  return robust_contrastive_loss_with_grad(sim, mask, tau).value;
}

inline LossBreakdown total_objective(double rank, double kl, double soft, double kappa,
                                     double gamma) {
  LossBreakdown out;
  out.rank = rank;
  out.kl = kl;
  out.soft = soft;
  out.kappa = kappa;
  out.gamma = gamma;
  out.total = rank + kappa * kl + gamma * soft;
  return out;
}

}  // namespace habit

#endif  // HABIT_DPL_HPP
