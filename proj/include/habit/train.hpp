#ifndef HABIT_TRAIN_HPP
#define HABIT_TRAIN_HPP

// Affine token encoders, the per-iteration objective with its analytic
// gradient, an AdamW optimizer and the fixed-partition training loop.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "habit/dpl.hpp"
#include "habit/features.hpp"
#include "habit/mke.hpp"
#include "habit/synth.hpp"

namespace habit {

enum class Ablation : std::uint32_t {
  NoSample = 1u << 0,     // random standard sample
  NoTr = 1u << 1,         // raw mutual knowledge differences
  NoMke = 1u << 2,        // every estimate set to 1
  NoCs = 1u << 3,         // current-pass outliers only
  NoKl = 1u << 4,         // drop the consistency term
  NoHistory = 1u << 5,    // no consistency term and no historical outliers
  NoMask = 1u << 6,       // all-ones mask everywhere
  NoMaskRank = 1u << 7,
  NoMaskSoft = 1u << 8,
  NoMaskKl = 1u << 9,
  NoRank = 1u << 10,
  NoSoft = 1u << 11,
};

class AblationFlags {
 public:
  AblationFlags() = default;
  AblationFlags(std::initializer_list<Ablation> flags) {
    for (Ablation a : flags) set(a);
  }
  bool has(Ablation a) const noexcept { return (bits_ & static_cast<std::uint32_t>(a)) != 0; }
  void set(Ablation a) noexcept { bits_ |= static_cast<std::uint32_t>(a); }
  std::uint32_t bits() const noexcept { return bits_; }
  bool operator==(const AblationFlags&) const = default;

  /// Names as used in configuration files, in declaration order.
  std::vector<std::string> names() const;
  static Ablation parse(const std::string& name);

 private:
  std::uint32_t bits_ = 0;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double tau = 0.1;
  double tau_mk = 0.1;
  double kappa = 10.0;
  double gamma = 0.5;
  double m_base = 0.2;
  double dbscan_eps = 0.05;
  int dbscan_min_pts = 0;  // 0 selects max(2, ceil(0.1 B))
  int q_tokens = 4;
  int embed_dim = 8;
  std::uint64_t seed = 0;
  AblationFlags ablations;
};

/// Throws ConfigError naming the offending field.
void validate(const TrainConfig& cfg);

struct AffineMap {
  Matrix<double> weight;  // out x in
  Vector<double> bias;    // out

  bool operator==(const AffineMap&) const = default;
};

struct EncoderParams {
  AffineMap composed;  // (2 d_in) -> (Q D)
  AffineMap target;    // d_in -> (Q D)
  int q_tokens = 0;
  int embed_dim = 0;

  int input_dim() const { return static_cast<int>(target.weight.cols()); }
  Eigen::Index size() const;
  Vector<double> flatten() const;
  void assign(const Vector<double>& flat);
  static EncoderParams zeros_like(const EncoderParams& shape);
  bool operator==(const EncoderParams&) const = default;
};

/// Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
EncoderParams init_params(int d_in, int q_tokens, int embed_dim, std::mt19937_64& rng);

TokenFeatureMatrix encode_composed(const EncoderParams& params, const Vector<double>& ref_vec,
                                   const Vector<double>& mod_vec);
TokenFeatureMatrix encode_target(const EncoderParams& params, const Vector<double>& target_vec);

/// One sample per row.
struct BatchInputs {
  Matrix<double> refs;
  Matrix<double> mods;
  Matrix<double> targets;

  Eigen::Index size() const { return refs.rows(); }
};

BatchInputs gather_batch(std::span<const TripletRecord> records,
                         std::span<const std::size_t> indices,
                         const std::vector<GalleryEntry>& gallery);

/// The non-differentiable half of an iteration: similarity, cleanliness
/// estimates, outliers and the resulting mask.
struct BatchAnalysis {
  SimilarityMatrix similarity;
  EstimationSequence estimates;
  Eigen::Index standard = 0;
  OutlierSet outliers;
  NoiseMask mask;
};

BatchAnalysis analyze_batch(const EncoderParams& params, const BatchInputs& batch,
                            const BatchMemory& memory, const TrainConfig& cfg,
                            std::mt19937_64& rng);

/// Quantities the objective treats as constants.
struct FrozenTerms {
  EstimationSequence estimates;
  NoiseMask mask;
  std::optional<SimilarityMatrix> prev_similarity;
  std::optional<NoiseMask> prev_mask;
};

FrozenTerms freeze(const BatchAnalysis& analysis, const BatchMemory& memory);

struct ObjectiveResult {
  LossBreakdown loss;
  EncoderParams grad;
};

/// Full objective with ablations applied; gradient w.r.t. params only.
ObjectiveResult objective(const EncoderParams& params, const BatchInputs& batch,
                          const FrozenTerms& frozen, const TrainConfig& cfg);

struct StepResult {
  LossBreakdown loss;
  EncoderParams grad;
  BatchAnalysis analysis;
};

StepResult loss_and_grad(const EncoderParams& params, const BatchInputs& batch,
                         const BatchMemory& memory, const TrainConfig& cfg, std::mt19937_64& rng);

void update_memory(BatchMemory& memory, const BatchAnalysis& analysis);

struct AdamState {
  std::int64_t step = 0;
  Vector<double> first_moment;
  Vector<double> second_moment;

  bool operator==(const AdamState&) const = default;
};

/// Decoupled weight decay Adam step, in place.
void adamw_step(EncoderParams& params, const EncoderParams& grad, AdamState& state,
                const TrainConfig& cfg);

struct Checkpoint {
  EncoderParams params;
  std::int64_t epoch = 0;
  std::uint64_t config_hash = 0;
  std::string rng_state;
  AdamState optimizer;
  std::vector<BatchMemory> memories;
  /// Canonical JSON of the run configuration; config_hash is its FNV-1a.
  std::string config_json;

  bool operator==(const Checkpoint&) const = default;
};

struct MetricsRow {
  int epoch = 0;
  int iter = 0;
  LossBreakdown loss;
  int masked_count = 0;
  double mean_cleanliness = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
};

/// Fixed partition of `n` records into batches of `batch_size`; a trailing
/// batch of one is merged into its predecessor.
std::vector<std::vector<std::size_t>> batch_partition(std::size_t n, int batch_size,
                                                      std::uint64_t seed);

struct TrainData {
  std::span<const TripletRecord> records;
  const std::vector<GalleryEntry>* gallery = nullptr;
};

/// Runs until `cfg.epochs` total epochs. With `resume`, continues from the
/// checkpoint's epoch, optimizer state, memories and RNG.
TrainResult train(const TrainData& data, const TrainConfig& cfg,
                  const std::string& config_json = {}, const Checkpoint* resume = nullptr);

std::string metrics_to_csv(const std::vector<MetricsRow>& rows);

std::uint64_t fnv1a64(std::string_view bytes);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace habit

#endif  // HABIT_TRAIN_HPP
