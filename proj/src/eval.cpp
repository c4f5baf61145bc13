#include "habit/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

#include "habit/error.hpp"

namespace habit {

namespace {

std::map<int, double> count_hits(std::span<const RankedList> ranked,
                                 std::span<const std::int64_t> truth, std::span<const int> ks) {
  if (ranked.size() != truth.size()) {
    throw LengthMismatchError("ranked lists and true ids differ in count");
  }
  std::vector<std::size_t> position(ranked.size());
  for (std::size_t q = 0; q < ranked.size(); ++q) {
    const auto it = std::find(ranked[q].begin(), ranked[q].end(), truth[q]);
    if (it == ranked[q].end()) {
      throw MissingTargetError("query " + std::to_string(q) + ": true id " +
                               std::to_string(truth[q]) + " not among candidates");
    }
    position[q] = static_cast<std::size_t>(it - ranked[q].begin());
  }
  std::map<int, double> out;
  for (int k : ks) {
    if (k < 1) throw ConfigError("ks: every K must be at least 1");
    std::size_t hits = 0;
    for (std::size_t pos : position) hits += pos < static_cast<std::size_t>(k) ? 1 : 0;
    out[k] = ranked.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ranked.size());
  }
  return out;
}

}  // namespace

RetrievalReport recall_at_k(std::span<const RankedList> ranked, std::span<const std::int64_t> truth,
                            std::span<const int> ks) {
  RetrievalReport report;
  report.recall_at = count_hits(ranked, truth, ks);
  report.n_queries = static_cast<std::int64_t>(ranked.size());
  return report;
}

std::map<int, double> recall_subset(std::span<const RankedList> ranked_subsets,
                                    std::span<const std::int64_t> truth, std::span<const int> ks) {
  return count_hits(ranked_subsets, truth, ks);
}

DetectionReport detection_metrics(const NoiseMask& mask, const EstimationSequence& estimates,
                                  std::span<const NoiseLabel> truth) {
  const auto n = static_cast<std::size_t>(mask.size());
  if (static_cast<std::size_t>(estimates.size()) != n || truth.size() != n) {
    throw LengthMismatchError("detection_metrics: mask, estimates and labels differ in length");
  }
  std::size_t flagged = 0, positives = 0, true_pos = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const bool flag = mask(static_cast<Eigen::Index>(b)) == 0;
    const bool noisy = truth[b] != NoiseLabel::Clean;
    flagged += flag;
    positives += noisy;
    true_pos += flag && noisy;
  }
  DetectionReport r;
  r.precision = flagged ? static_cast<double>(true_pos) / static_cast<double>(flagged) : 0.0;
  r.recall = positives ? static_cast<double>(true_pos) / static_cast<double>(positives) : 0.0;
  const double denom = r.precision + r.recall;
  r.f1 = denom > 0 ? 2.0 * r.precision * r.recall / denom : 0.0;

  // AUC as the normalized count of correctly ordered (noisy, clean) pairs.
  // Sorting clean scores turns the pair count into binary searches.
  std::vector<double> clean_scores, noisy_scores;
  for (std::size_t b = 0; b < n; ++b) {
    const double score = 1.0 - estimates(static_cast<Eigen::Index>(b));
    (truth[b] == NoiseLabel::Clean ? clean_scores : noisy_scores).push_back(score);
  }
  if (!clean_scores.empty() && !noisy_scores.empty()) {
    std::sort(clean_scores.begin(), clean_scores.end());
    double wins = 0;
    for (double s : noisy_scores) {
      const auto lower = std::lower_bound(clean_scores.begin(), clean_scores.end(), s);
      const auto upper = std::upper_bound(lower, clean_scores.end(), s);
      wins += static_cast<double>(lower - clean_scores.begin()) +
              0.5 * static_cast<double>(upper - lower);
    }
    r.auc = wins / (static_cast<double>(clean_scores.size()) * static_cast<double>(noisy_scores.size()));
    r.threshold_free = true;
  }
  return r;
}

Matrix<double> encode_gallery(const EncoderParams& params, const std::vector<GalleryEntry>& gallery) {
  Matrix<double> pooled(static_cast<Eigen::Index>(gallery.size()), params.embed_dim);
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    pooled.row(static_cast<Eigen::Index>(g)) = pool(encode_target(params, gallery[g].vec)).transpose();
  }
  return pooled;
}

namespace {

Matrix<double> query_scores(const EncoderParams& params, std::span<const TripletRecord> queries,
                            const Matrix<double>& gallery_pooled) {
  Matrix<double> composed(static_cast<Eigen::Index>(queries.size()), params.embed_dim);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    composed.row(static_cast<Eigen::Index>(q)) =
        pool(encode_composed(params, queries[q].ref, queries[q].mod)).transpose();
  }
  return similarity_matrix(composed, gallery_pooled);
}

RankedList rank_candidates(const Eigen::Ref<const RowVector<double>>& scores,
                           std::vector<std::int64_t> candidates) {
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::int64_t a, std::int64_t b) {
    const double sa = scores(a), sb = scores(b);
    return sa > sb || (sa == sb && a < b);
  });
  return candidates;
}

}  // namespace

std::vector<RankedList> rank_gallery(const EncoderParams& params,
                                     std::span<const TripletRecord> queries,
                                     const std::vector<GalleryEntry>& gallery) {
  const Matrix<double> scores = query_scores(params, queries, encode_gallery(params, gallery));
  std::vector<std::int64_t> all(gallery.size());
  std::iota(all.begin(), all.end(), std::int64_t{0});
  std::vector<RankedList> out;
  out.reserve(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    out.push_back(rank_candidates(scores.row(static_cast<Eigen::Index>(q)), all));
  }
  return out;
}

RetrievalReport evaluate_retrieval(const EncoderParams& params, std::span<const TripletRecord> queries,
                                   const std::vector<GalleryEntry>& gallery, const EvalConfig& cfg,
                                   std::uint64_t seed) {
  const auto n_gallery = static_cast<std::int64_t>(gallery.size());
  std::vector<std::int64_t> truth;
  truth.reserve(queries.size());
  for (const auto& q : queries) {
    if (q.target_id < 0 || q.target_id >= n_gallery) {
      throw MissingTargetError("query " + std::to_string(q.id) + " targets unknown gallery id");
    }
    truth.push_back(q.target_id);
  }
  const Matrix<double> scores = query_scores(params, queries, encode_gallery(params, gallery));

  std::vector<std::int64_t> all(gallery.size());
  std::iota(all.begin(), all.end(), std::int64_t{0});
  std::vector<RankedList> ranked, subsets;
  ranked.reserve(queries.size());
  subsets.reserve(queries.size());
  std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ULL);
  const auto distractors =
      static_cast<std::int64_t>(std::min<std::int64_t>(cfg.subset_size - 1, n_gallery - 1));
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto row = scores.row(static_cast<Eigen::Index>(q));
    ranked.push_back(rank_candidates(row, all));

    std::vector<std::int64_t> subset{truth[q]};
    std::uniform_int_distribution<std::int64_t> pick(0, n_gallery - 1);
    while (static_cast<std::int64_t>(subset.size()) < distractors + 1) {
      const std::int64_t id = pick(rng);
      if (std::find(subset.begin(), subset.end(), id) == subset.end()) subset.push_back(id);
    }
    subsets.push_back(rank_candidates(row, std::move(subset)));
  }
  RetrievalReport report = recall_at_k(ranked, truth, cfg.ks);
  report.recall_sub_at = recall_subset(subsets, truth, cfg.sub_ks);
  return report;
}

std::string retrieval_report_to_csv(const RetrievalReport& report) {
  std::string out = "metric,k,value\n";
  char buf[128];
  for (const auto& [k, v] : report.recall_at) {
    std::snprintf(buf, sizeof buf, "recall,%d,%.17g\n", k, v);
    out += buf;
  }
  if (report.recall_sub_at) {
    for (const auto& [k, v] : *report.recall_sub_at) {
      std::snprintf(buf, sizeof buf, "recall_sub,%d,%.17g\n", k, v);
      out += buf;
    }
  }
  std::snprintf(buf, sizeof buf, "n_queries,,%lld\n", static_cast<long long>(report.n_queries));
  out += buf;
  return out;
}

std::string detection_report_to_csv(const DetectionReport& report) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "metric,value\nprecision,%.17g\nrecall,%.17g\nf1,%.17g\nauc,%.17g\nthreshold_free,%d\n",
                report.precision, report.recall, report.f1, report.auc, report.threshold_free ? 1 : 0);
  return buf;
}

}  // namespace habit
