#ifndef HABIT_EVAL_HPP
#define HABIT_EVAL_HPP

// Retrieval metrics over ranked galleries and noise-detection quality
// against ground-truth labels.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "habit/dpl.hpp"
#include "habit/synth.hpp"
#include "habit/train.hpp"

namespace habit {

using RankedList = std::vector<std::int64_t>;

struct RetrievalReport {
  std::map<int, double> recall_at;
  std::optional<std::map<int, double>> recall_sub_at;
  std::int64_t n_queries = 0;
};

/// Fraction of queries whose true id appears in the top K of its list.
RetrievalReport recall_at_k(std::span<const RankedList> ranked, std::span<const std::int64_t> truth,
                            std::span<const int> ks);

/// Recall over per-query candidate subsets, already ranked.
std::map<int, double> recall_subset(std::span<const RankedList> ranked_subsets,
                                    std::span<const std::int64_t> truth,
                                    std::span<const int> ks = std::vector<int>{1, 2, 3});

struct DetectionReport {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double auc = 0.5;
  /// True when both classes are present, i.e. the threshold-free AUC is
  /// defined; otherwise auc is reported as 0.5.
  bool threshold_free = false;
};

/// Flags are mask zeros; positives are non-clean labels. AUC ranks samples
/// by 1 - estimate with ties counting one half.
DetectionReport detection_metrics(const NoiseMask& mask, const EstimationSequence& estimates,
                                  std::span<const NoiseLabel> truth);

/// Pooled vectors of every gallery entry under the target encoder, one per row.
Matrix<double> encode_gallery(const EncoderParams& params, const std::vector<GalleryEntry>& gallery);

/// Gallery ids by descending cosine; ties by ascending id.
std::vector<RankedList> rank_gallery(const EncoderParams& params,
                                     std::span<const TripletRecord> queries,
                                     const std::vector<GalleryEntry>& gallery);

struct EvalConfig {
  std::vector<int> ks{1, 5, 10, 50};
  std::vector<int> sub_ks{1, 2, 3};
  int subset_size = 6;  // true target plus distractors
  double test_fraction = 0.2;
};

RetrievalReport evaluate_retrieval(const EncoderParams& params, std::span<const TripletRecord> queries,
                                   const std::vector<GalleryEntry>& gallery, const EvalConfig& cfg,
                                   std::uint64_t seed);

/// `metric,k,value` rows.
std::string retrieval_report_to_csv(const RetrievalReport& report);
/// `metric,value` rows.
std::string detection_report_to_csv(const DetectionReport& report);

}  // namespace habit

#endif  // HABIT_EVAL_HPP
