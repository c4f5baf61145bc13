#ifndef HABIT_SYNTH_HPP
#define HABIT_SYNTH_HPP

// Synthetic composed-retrieval triplets with controllable noisy
// correspondence and ground-truth labels.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "habit/features.hpp"

namespace habit {

enum class NoiseLabel { Clean, Partial, Mismatch };

const char* to_string(NoiseLabel label) noexcept;
NoiseLabel parse_noise_label(const std::string& name);

struct TripletRecord {
  std::int64_t id = 0;
  Vector<double> ref;
  Vector<double> mod;
  std::int64_t target_id = 0;
  NoiseLabel noise_label = NoiseLabel::Clean;

  bool operator==(const TripletRecord&) const = default;
};

struct GalleryEntry {
  std::int64_t id = 0;
  Vector<double> vec;
  std::vector<int> attributes;  // latent; diagnostics only, not serialized

  bool operator==(const GalleryEntry&) const = default;
};

struct GenConfig {
  std::int64_t n_triplets = 2000;
  std::int64_t n_gallery = 2500;
  int d_in = 16;
  int n_attrs = 8;
  int n_attr_values = 5;
  int max_delta_support = 3;  // modification deltas touch 2..max attributes
  double sigma = 0.0;
  double partial_fraction = 0.5;
  double unmentioned_noise_std = 0.1;
  std::uint64_t seed = 0;
};

/// Throws ConfigError naming the offending field.
void validate(const GenConfig& cfg);

struct Dataset {
  std::vector<TripletRecord> records;
  std::vector<GalleryEntry> gallery;
  /// Reference attributes with the full modification applied, per record.
  /// Latent ground truth, kept in memory only.
  std::vector<std::vector<int>> intended_attributes;
};

Dataset generate(const GenConfig& cfg);

struct Split {
  std::vector<TripletRecord> train;
  std::vector<TripletRecord> test;
  /// Fewer clean records were available than the requested test size.
  bool warning = false;
};

/// Seeded shuffle split. Only clean records go to the test side; everything
/// else stays in train.
Split split(const std::vector<TripletRecord>& records, double test_fraction, std::uint64_t seed);

}  // namespace habit

#endif  // HABIT_SYNTH_HPP
