#include "habit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "habit/error.hpp"

namespace habit {

const char* to_string(NoiseLabel label) noexcept {
  switch (label) {
    case NoiseLabel::Clean: return "clean";
    case NoiseLabel::Partial: return "partial";
    case NoiseLabel::Mismatch: return "mismatch";
  }
  return "clean";
}

NoiseLabel parse_noise_label(const std::string& name) {
  if (name == "clean") return NoiseLabel::Clean;
  if (name == "partial") return NoiseLabel::Partial;
  if (name == "mismatch") return NoiseLabel::Mismatch;
  throw FormatError("unknown noise_label '" + name + "'");
}

void validate(const GenConfig& cfg) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  if (cfg.n_triplets < 1) fail("n_triplets", "must be at least 1");
  if (cfg.n_gallery < cfg.n_triplets) fail("n_gallery", "must be at least n_triplets");
  if (cfg.n_attrs < 2) fail("n_attrs", "must be at least 2");
  if (cfg.d_in < cfg.n_attrs) fail("d_in", "must be at least n_attrs");
  if (cfg.n_attr_values < 2) fail("n_attr_values", "must be at least 2");
  if (cfg.max_delta_support < 2 || cfg.max_delta_support > cfg.n_attrs) {
    fail("max_delta_support", "must lie in [2, n_attrs]");
  }
  if (!(cfg.sigma >= 0.0 && cfg.sigma <= 1.0)) fail("sigma", "must lie in [0, 1]");
  if (!(cfg.partial_fraction >= 0.0 && cfg.partial_fraction <= 1.0)) {
    fail("partial_fraction", "must lie in [0, 1]");
  }
  if (!(cfg.unmentioned_noise_std >= 0.0) || !std::isfinite(cfg.unmentioned_noise_std)) {
    fail("unmentioned_noise_std", "must be a nonnegative finite number");
  }
  const double capacity = cfg.n_attrs * std::log(static_cast<double>(cfg.n_attr_values));
  if (capacity < std::log(2.0 * static_cast<double>(cfg.n_gallery))) {
    fail("n_attrs", "attribute space too small for n_gallery distinct entries");
  }
  if (cfg.sigma > 0 && cfg.n_gallery < 2) fail("n_gallery", "mismatch noise needs at least 2 entries");
}

namespace {

Matrix<double> orthonormal_columns(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<double> g(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) g(r, c) = normal(rng);
  Eigen::HouseholderQR<Matrix<double>> qr(g);
  return qr.householderQ() * Matrix<double>::Identity(rows, cols);
}

Vector<double> to_vector(const std::vector<int>& values, double center) {
  Vector<double> v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t k = 0; k < values.size(); ++k) v(static_cast<Eigen::Index>(k)) = values[k] - center;
  return v;
}

}  // namespace

Dataset generate(const GenConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  const int n_attrs = cfg.n_attrs;
  const double center = 0.5 * (cfg.n_attr_values - 1);

  const Matrix<double> image_proj = orthonormal_columns(cfg.d_in, n_attrs, rng);
  const Matrix<double> text_proj = orthonormal_columns(cfg.d_in, n_attrs, rng);

  const auto n = static_cast<std::size_t>(cfg.n_triplets);
  const auto n_noisy = static_cast<std::size_t>(std::floor(cfg.sigma * static_cast<double>(n)));
  const auto n_partial =
      static_cast<std::size_t>(std::floor(cfg.partial_fraction * static_cast<double>(n_noisy)));

  std::vector<NoiseLabel> labels(n, NoiseLabel::Clean);
  {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < n_noisy; ++k) {
      labels[order[k]] = k < n_partial ? NoiseLabel::Partial : NoiseLabel::Mismatch;
    }
  }

  std::uniform_int_distribution<int> value_dist(0, cfg.n_attr_values - 1);
  std::uniform_int_distribution<int> support_dist(2, cfg.max_delta_support);
  auto draw_attributes = [&] {
    std::vector<int> a(static_cast<std::size_t>(n_attrs));
    for (int& x : a) x = value_dist(rng);
    return a;
  };

  std::set<std::vector<int>> used;
  std::vector<std::vector<int>> entry_attrs;  // gallery entries in creation order
  entry_attrs.reserve(static_cast<std::size_t>(cfg.n_gallery));

  Dataset out;
  out.records.resize(n);
  out.intended_attributes.resize(n);
  std::vector<int> attr_index(static_cast<std::size_t>(n_attrs));
  std::iota(attr_index.begin(), attr_index.end(), 0);

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> ref_attrs, delta, applied;
    while (true) {
      ref_attrs = draw_attributes();
      std::shuffle(attr_index.begin(), attr_index.end(), rng);
      const int support = support_dist(rng);
      delta.assign(static_cast<std::size_t>(n_attrs), 0);
      for (int s = 0; s < support; ++s) {
        const auto k = static_cast<std::size_t>(attr_index[static_cast<std::size_t>(s)]);
        int target_value = value_dist(rng);
        while (target_value == ref_attrs[k]) target_value = value_dist(rng);
        delta[k] = target_value - ref_attrs[k];
      }
      applied = ref_attrs;
      if (labels[i] == NoiseLabel::Partial) {
        // Apply a nonempty strict subset of the delta's support.
        std::uniform_int_distribution<int> keep_dist(1, support - 1);
        const int keep = keep_dist(rng);
        std::vector<int> chosen(attr_index.begin(), attr_index.begin() + support);
        std::shuffle(chosen.begin(), chosen.end(), rng);
        for (int s = 0; s < keep; ++s) {
          const auto k = static_cast<std::size_t>(chosen[static_cast<std::size_t>(s)]);
          applied[k] += delta[k];
        }
      } else {
        for (std::size_t k = 0; k < applied.size(); ++k) applied[k] += delta[k];
      }
      if (!used.contains(applied)) break;
    }
    used.insert(applied);
    entry_attrs.push_back(applied);

    std::vector<int> intended = ref_attrs;
    for (std::size_t k = 0; k < intended.size(); ++k) intended[k] += delta[k];
    out.intended_attributes[i] = std::move(intended);

    TripletRecord& rec = out.records[i];
    rec.id = static_cast<std::int64_t>(i);
    rec.ref = image_proj * to_vector(ref_attrs, center);
    rec.mod = text_proj * to_vector(delta, 0.0);
    rec.noise_label = labels[i];
  }

  while (entry_attrs.size() < static_cast<std::size_t>(cfg.n_gallery)) {
    std::vector<int> a = draw_attributes();
    if (used.insert(a).second) entry_attrs.push_back(std::move(a));
  }

  std::vector<std::int64_t> gallery_id(entry_attrs.size());
  std::iota(gallery_id.begin(), gallery_id.end(), std::int64_t{0});
  std::shuffle(gallery_id.begin(), gallery_id.end(), rng);

  std::normal_distribution<double> discrepancy(0.0, 1.0);
  out.gallery.resize(entry_attrs.size());
  for (std::size_t k = 0; k < entry_attrs.size(); ++k) {
    GalleryEntry& entry = out.gallery[static_cast<std::size_t>(gallery_id[k])];
    entry.id = gallery_id[k];
    entry.vec = image_proj * to_vector(entry_attrs[k], center);
    for (Eigen::Index d = 0; d < entry.vec.size(); ++d) {
      entry.vec(d) += cfg.unmentioned_noise_std * discrepancy(rng);
    }
    entry.attributes = std::move(entry_attrs[k]);
  }

  const auto n_gallery = static_cast<std::int64_t>(out.gallery.size());
  for (std::size_t i = 0; i < n; ++i) {
    TripletRecord& rec = out.records[i];
    rec.target_id = gallery_id[i];
    if (rec.noise_label == NoiseLabel::Mismatch) {
      std::uniform_int_distribution<std::int64_t> other(0, n_gallery - 2);
      std::int64_t replacement = other(rng);
      if (replacement >= rec.target_id) ++replacement;
      rec.target_id = replacement;
    }
  }
  return out;
}

Split split(const std::vector<TripletRecord>& records, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction: must lie strictly between 0 and 1");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  std::shuffle(order.begin(), order.end(), rng);

  const auto wanted = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(records.size())));
  Split out;
  std::vector<bool> to_test(records.size(), false);
  std::size_t taken = 0;
  for (std::size_t k : order) {
    if (taken == wanted) break;
    if (records[k].noise_label == NoiseLabel::Clean) {
      to_test[k] = true;
      ++taken;
    }
  }
  out.warning = taken < wanted;
  for (std::size_t k : order) {
    (to_test[k] ? out.test : out.train).push_back(records[k]);
  }
  return out;
}

}  // namespace habit
