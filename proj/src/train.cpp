#include "habit/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <utility>

#include "habit/error.hpp"

namespace habit {

namespace {

struct AblationName {
  Ablation flag;
  const char* name;
};

constexpr std::array<AblationName, 12> kAblationNames{{
    {Ablation::NoSample, "no_sample"},
    {Ablation::NoTr, "no_tr"},
    {Ablation::NoMke, "no_mke"},
    {Ablation::NoCs, "no_cs"},
    {Ablation::NoKl, "no_kl"},
    {Ablation::NoHistory, "no_history"},
    {Ablation::NoMask, "no_mask"},
    {Ablation::NoMaskRank, "no_mask_rank"},
    {Ablation::NoMaskSoft, "no_mask_soft"},
    {Ablation::NoMaskKl, "no_mask_kl"},
    {Ablation::NoRank, "no_rank"},
    {Ablation::NoSoft, "no_soft"},
}};

}  // namespace

std::vector<std::string> AblationFlags::names() const {
  std::vector<std::string> out;
  for (const auto& entry : kAblationNames) {
    if (has(entry.flag)) out.emplace_back(entry.name);
  }
  return out;
}

Ablation AblationFlags::parse(const std::string& name) {
  for (const auto& entry : kAblationNames) {
    if (name == entry.name) return entry.flag;
  }
  throw ConfigError("ablations: unknown flag '" + name + "'");
}

void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  auto positive = [&](double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) fail(field, "must be positive");
  };
  if (cfg.epochs < 0) fail("epochs", "must be nonnegative");
  if (cfg.batch_size < 2) fail("batch_size", "must be at least 2");
  positive(cfg.learning_rate, "learning_rate");
  if (!(cfg.weight_decay >= 0.0)) fail("weight_decay", "must be nonnegative");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
  if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
  positive(cfg.adam_eps, "adam_eps");
  positive(cfg.tau, "tau");
  positive(cfg.tau_mk, "tau_mk");
  if (!std::isfinite(cfg.kappa)) fail("kappa", "must be finite");
  if (!std::isfinite(cfg.gamma)) fail("gamma", "must be finite");
  positive(cfg.m_base, "m_base");
  positive(cfg.dbscan_eps, "dbscan_eps");
  if (cfg.dbscan_min_pts < 0) fail("dbscan_min_pts", "must be nonnegative (0 = automatic)");
  if (cfg.q_tokens < 1) fail("q_tokens", "must be at least 1");
  if (cfg.embed_dim < 1) fail("embed_dim", "must be at least 1");
}

// ---------------------------------------------------------------------------
// Parameters

Eigen::Index EncoderParams::size() const {
  return composed.weight.size() + composed.bias.size() + target.weight.size() + target.bias.size();
}

Vector<double> EncoderParams::flatten() const {
  Vector<double> flat(size());
  Eigen::Index at = 0;
  auto put = [&](const auto& m) {
    flat.segment(at, m.size()) = m.reshaped();
    at += m.size();
  };
  put(composed.weight);
  put(composed.bias);
  put(target.weight);
  put(target.bias);
  return flat;
}

void EncoderParams::assign(const Vector<double>& flat) {
  if (flat.size() != size()) throw DimensionMismatchError("parameter vector has the wrong length");
  Eigen::Index at = 0;
  auto take = [&](auto& m) {
    m.reshaped() = flat.segment(at, m.size());
    at += m.size();
  };
  take(composed.weight);
  take(composed.bias);
  take(target.weight);
  take(target.bias);
}

EncoderParams EncoderParams::zeros_like(const EncoderParams& shape) {
  EncoderParams out = shape;
  out.composed.weight.setZero();
  out.composed.bias.setZero();
  out.target.weight.setZero();
  out.target.bias.setZero();
  return out;
}

EncoderParams init_params(int d_in, int q_tokens, int embed_dim, std::mt19937_64& rng) {
  const Eigen::Index out_dim = static_cast<Eigen::Index>(q_tokens) * embed_dim;
  auto init_map = [&](Eigen::Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    AffineMap map{Matrix<double>(out_dim, fan_in), Vector<double>(out_dim)};
    for (Eigen::Index c = 0; c < fan_in; ++c)
      for (Eigen::Index r = 0; r < out_dim; ++r) map.weight(r, c) = dist(rng);
    for (Eigen::Index r = 0; r < out_dim; ++r) map.bias(r) = dist(rng);
    return map;
  };
  EncoderParams p;
  p.q_tokens = q_tokens;
  p.embed_dim = embed_dim;
  p.composed = init_map(2 * static_cast<Eigen::Index>(d_in));
  p.target = init_map(d_in);
  return p;
}

// ---------------------------------------------------------------------------
// Encoders

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Forward cache for one encoded input.
struct Encoded {
  Vector<double> input;
  TokenFeatureMatrix tokens;
  Vector<double> row_norms;
  double mean_norm = 0;
  Vector<double> pooled;
};

Encoded encode(const AffineMap& map, Vector<double> input, int q_tokens, int embed_dim) {
  if (input.size() != map.weight.cols()) {
    throw DimensionMismatchError("encoder input has dim " + std::to_string(input.size()) +
                                 ", expected " + std::to_string(map.weight.cols()));
  }
  const Vector<double> raw = map.weight * input + map.bias;
  const RowMajorMatrix rows = Eigen::Map<const RowMajorMatrix>(raw.data(), q_tokens, embed_dim);
  Encoded enc;
  enc.input = std::move(input);
  enc.row_norms = rows.rowwise().norm();
  enc.tokens = normalize_rows(rows);
  const Vector<double> mean = enc.tokens.colwise().mean().transpose();
  enc.mean_norm = mean.norm();
  if (!(enc.mean_norm >= kMinNorm)) throw ZeroRowError("pooled mean vector has norm below 1e-12");
  enc.pooled = mean / enc.mean_norm;
  return enc;
}

Vector<double> concat(const Vector<double>& a, const Vector<double>& b) {
  Vector<double> out(a.size() + b.size());
  out << a, b;
  return out;
}

/// Accumulates dL/dW, dL/db given dL/d(pooled).
void backprop(const Encoded& enc, const Vector<double>& grad_pooled, AffineMap& grad_map) {
  const auto q_tokens = enc.tokens.rows();
  const auto embed_dim = enc.tokens.cols();
  const Vector<double> grad_mean =
      (grad_pooled - enc.pooled * enc.pooled.dot(grad_pooled)) / enc.mean_norm;
  const Vector<double> grad_token = grad_mean / static_cast<double>(q_tokens);
  Vector<double> grad_raw(q_tokens * embed_dim);
  for (Eigen::Index q = 0; q < q_tokens; ++q) {
    const Vector<double> f = enc.tokens.row(q).transpose();
    grad_raw.segment(q * embed_dim, embed_dim) = (grad_token - f * f.dot(grad_token)) / enc.row_norms(q);
  }
  grad_map.weight.noalias() += grad_raw * enc.input.transpose();
  grad_map.bias += grad_raw;
}

struct ForwardPass {
  std::vector<Encoded> composed;
  std::vector<Encoded> target;
  Matrix<double> composed_pooled;  // B x D
  Matrix<double> target_pooled;    // B x D
  SimilarityMatrix similarity;
};

ForwardPass forward(const EncoderParams& params, const BatchInputs& batch) {
  const Eigen::Index n = batch.size();
  ForwardPass fp;
  fp.composed.reserve(static_cast<std::size_t>(n));
  fp.target.reserve(static_cast<std::size_t>(n));
  fp.composed_pooled.resize(n, params.embed_dim);
  fp.target_pooled.resize(n, params.embed_dim);
  for (Eigen::Index b = 0; b < n; ++b) {
    fp.composed.push_back(encode(params.composed,
                                 concat(batch.refs.row(b).transpose(), batch.mods.row(b).transpose()),
                                 params.q_tokens, params.embed_dim));
    fp.target.push_back(encode(params.target, batch.targets.row(b).transpose(), params.q_tokens,
                               params.embed_dim));
    fp.composed_pooled.row(b) = fp.composed.back().pooled.transpose();
    fp.target_pooled.row(b) = fp.target.back().pooled.transpose();
  }
  fp.similarity = similarity_matrix(fp.composed_pooled, fp.target_pooled);
  return fp;
}

}  // namespace

TokenFeatureMatrix encode_composed(const EncoderParams& params, const Vector<double>& ref_vec,
                                   const Vector<double>& mod_vec) {
  if (ref_vec.size() != mod_vec.size()) {
    throw DimensionMismatchError("reference and modification vectors differ in length");
  }
  return encode(params.composed, concat(ref_vec, mod_vec), params.q_tokens, params.embed_dim).tokens;
}

TokenFeatureMatrix encode_target(const EncoderParams& params, const Vector<double>& target_vec) {
  return encode(params.target, target_vec, params.q_tokens, params.embed_dim).tokens;
}

BatchInputs gather_batch(std::span<const TripletRecord> records,
                         std::span<const std::size_t> indices,
                         const std::vector<GalleryEntry>& gallery) {
  if (indices.empty()) throw DegenerateBatchError("empty batch");
  const Eigen::Index d_in = records[indices.front()].ref.size();
  const auto n = static_cast<Eigen::Index>(indices.size());
  BatchInputs batch{Matrix<double>(n, d_in), Matrix<double>(n, d_in), Matrix<double>(n, d_in)};
  for (Eigen::Index b = 0; b < n; ++b) {
    const TripletRecord& rec = records[indices[static_cast<std::size_t>(b)]];
    if (rec.target_id < 0 || rec.target_id >= static_cast<std::int64_t>(gallery.size())) {
      throw MissingTargetError("triplet " + std::to_string(rec.id) + " targets unknown gallery id");
    }
    const GalleryEntry& target = gallery[static_cast<std::size_t>(rec.target_id)];
    if (rec.ref.size() != d_in || rec.mod.size() != d_in || target.vec.size() != d_in) {
      throw DimensionMismatchError("triplet " + std::to_string(rec.id) + " has inconsistent dims");
    }
    batch.refs.row(b) = rec.ref.transpose();
    batch.mods.row(b) = rec.mod.transpose();
    batch.targets.row(b) = target.vec.transpose();
  }
  return batch;
}

// ---------------------------------------------------------------------------
// One iteration

BatchAnalysis analyze_batch(const EncoderParams& params, const BatchInputs& batch,
                            const BatchMemory& memory, const TrainConfig& cfg,
                            std::mt19937_64& rng) {
  const Eigen::Index n = batch.size();
  if (n < 2) throw DegenerateBatchError("batch needs at least two samples");
  const AblationFlags& ab = cfg.ablations;
  const ForwardPass fp = forward(params, batch);

  BatchAnalysis out;
  out.similarity = fp.similarity;
  out.standard = select_standard(fp.similarity, cfg.tau);
  if (ab.has(Ablation::NoMke)) {
    out.estimates = EstimationSequence::Ones(n);
  } else {
    if (ab.has(Ablation::NoSample)) {
      std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
      out.standard = pick(rng);
    }
    std::vector<TokenFeatureMatrix> composed, target;
    composed.reserve(static_cast<std::size_t>(n));
    target.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index b = 0; b < n; ++b) {
      composed.push_back(fp.composed[static_cast<std::size_t>(b)].tokens);
      target.push_back(fp.target[static_cast<std::size_t>(b)].tokens);
    }
    const TransitionMode mode =
        ab.has(Ablation::NoTr) ? TransitionMode::RawDifference : TransitionMode::Relative;
    out.estimates = estimate_batch_against(composed, target, out.standard, cfg.tau_mk, mode);
  }

  const int min_pts = cfg.dbscan_min_pts > 0 ? cfg.dbscan_min_pts : default_min_pts(n);
  out.outliers = dbscan_1d(out.estimates, cfg.dbscan_eps, min_pts);

  if (ab.has(Ablation::NoMask)) {
    out.mask = all_ones_mask(n);
  } else if (ab.has(Ablation::NoCs) || ab.has(Ablation::NoHistory)) {
    out.mask = chrono_mask(out.outliers, out.outliers, n);
  } else {
    std::optional<OutlierSet> previous = memory.prev_outliers;
    if (!previous && memory.prev_estimates) {
      previous = dbscan_1d(*memory.prev_estimates, cfg.dbscan_eps, min_pts);
    }
    out.mask = chrono_mask(out.outliers, previous, n);
  }
  return out;
}

FrozenTerms freeze(const BatchAnalysis& analysis, const BatchMemory& memory) {
  return {analysis.estimates, analysis.mask, memory.prev_similarity, memory.prev_mask};
}

ObjectiveResult objective(const EncoderParams& params, const BatchInputs& batch,
                          const FrozenTerms& frozen, const TrainConfig& cfg) {
  const Eigen::Index n = batch.size();
  if (n < 2) throw DegenerateBatchError("batch needs at least two samples");
  const AblationFlags& ab = cfg.ablations;
  const ForwardPass fp = forward(params, batch);
  const NoiseMask ones = all_ones_mask(n);
  const NoiseMask& mask = ab.has(Ablation::NoMask) ? ones : frozen.mask;

  SimilarityMatrix grad_sim = SimilarityMatrix::Zero(n, n);
  double rank = 0, kl = 0, soft = 0;

  if (!ab.has(Ablation::NoRank)) {
    const auto r = robust_contrastive_loss_with_grad(
        fp.similarity, ab.has(Ablation::NoMaskRank) ? ones : mask, cfg.tau);
    rank = r.value;
    grad_sim += r.grad;
  }
  const bool kl_enabled = !ab.has(Ablation::NoKl) && !ab.has(Ablation::NoHistory) &&
                          frozen.prev_similarity.has_value();
  if (kl_enabled) {
    const bool unmasked = ab.has(Ablation::NoMaskKl) || ab.has(Ablation::NoMask);
    const NoiseMask& now = unmasked ? ones : mask;
    const NoiseMask& prev = (unmasked || !frozen.prev_mask) ? ones : *frozen.prev_mask;
    const auto k = kl_consistency_with_grad(fp.similarity, *frozen.prev_similarity, now, prev, cfg.tau);
    kl = k.value;
    grad_sim += cfg.kappa * k.grad;
  }
  if (!ab.has(Ablation::NoSoft)) {
    const auto s = soft_margin_loss_with_grad(
        fp.similarity, frozen.estimates, ab.has(Ablation::NoMaskSoft) ? ones : mask, cfg.m_base);
    soft = s.value;
    grad_sim += cfg.gamma * s.grad;
  }

  ObjectiveResult out;
  out.loss = total_objective(rank, kl, soft, cfg.kappa, cfg.gamma);
  out.loss.tau = cfg.tau;
  out.grad = EncoderParams::zeros_like(params);

  const Matrix<double> grad_composed = grad_sim * fp.target_pooled;
  const Matrix<double> grad_target = grad_sim.transpose() * fp.composed_pooled;
  for (Eigen::Index b = 0; b < n; ++b) {
    backprop(fp.composed[static_cast<std::size_t>(b)], grad_composed.row(b).transpose(),
             out.grad.composed);
    backprop(fp.target[static_cast<std::size_t>(b)], grad_target.row(b).transpose(),
             out.grad.target);
  }
  return out;
}

StepResult loss_and_grad(const EncoderParams& params, const BatchInputs& batch,
                         const BatchMemory& memory, const TrainConfig& cfg, std::mt19937_64& rng) {
  StepResult out;
  out.analysis = analyze_batch(params, batch, memory, cfg, rng);
  auto obj = objective(params, batch, freeze(out.analysis, memory), cfg);
  out.loss = obj.loss;
  out.grad = std::move(obj.grad);
  return out;
}

void update_memory(BatchMemory& memory, const BatchAnalysis& analysis) {
  memory.prev_similarity = analysis.similarity;
  memory.prev_estimates = analysis.estimates;
  memory.prev_outliers = analysis.outliers;
  memory.prev_mask = analysis.mask;
}

// ---------------------------------------------------------------------------
// Optimizer and loop

void adamw_step(EncoderParams& params, const EncoderParams& grad, AdamState& state,
                const TrainConfig& cfg) {
  Vector<double> theta = params.flatten();
  const Vector<double> g = grad.flatten();
  if (state.first_moment.size() != theta.size()) {
    state.first_moment = Vector<double>::Zero(theta.size());
    state.second_moment = Vector<double>::Zero(theta.size());
  }
  ++state.step;
  state.first_moment = cfg.beta1 * state.first_moment + (1.0 - cfg.beta1) * g;
  state.second_moment = cfg.beta2 * state.second_moment + (1.0 - cfg.beta2) * g.cwiseAbs2();
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  theta *= 1.0 - cfg.learning_rate * cfg.weight_decay;
  theta.array() -= cfg.learning_rate * (state.first_moment.array() / bias1) /
                   ((state.second_moment.array() / bias2).sqrt() + cfg.adam_eps);
  params.assign(theta);
}

std::vector<std::vector<std::size_t>> batch_partition(std::size_t n, int batch_size,
                                                      std::uint64_t seed) {
  if (n < 2) throw DegenerateBatchError("need at least two training records");
  if (batch_size < 2) throw ConfigError("batch_size: must be at least 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += b) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + b)));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

TrainResult train(const TrainData& data, const TrainConfig& cfg, const std::string& config_json,
                  const Checkpoint* resume) {
  validate(cfg);
  if (data.records.empty() || data.gallery == nullptr) throw ConfigError("dataset: no training records");
  const auto partition = batch_partition(data.records.size(), cfg.batch_size, cfg.seed);
  std::vector<BatchInputs> inputs;
  inputs.reserve(partition.size());
  for (const auto& idx : partition) inputs.push_back(gather_batch(data.records, idx, *data.gallery));
  const int d_in = static_cast<int>(data.records.front().ref.size());

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt.config_json = config_json;
  ckpt.config_hash = fnv1a64(config_json);
  std::mt19937_64 rng(cfg.seed);

  if (resume != nullptr) {
    if (resume->config_hash != ckpt.config_hash) {
      throw ConfigError("resume: checkpoint was produced by a different configuration");
    }
    if (resume->memories.size() != partition.size() || resume->params.input_dim() != d_in) {
      throw ConfigError("resume: checkpoint does not match this dataset");
    }
    ckpt.params = resume->params;
    ckpt.optimizer = resume->optimizer;
    ckpt.memories = resume->memories;
    ckpt.epoch = resume->epoch;
    std::istringstream state(resume->rng_state);
    state >> rng;
    if (!state) throw FormatError("resume: unreadable RNG state");
  } else {
    ckpt.params = init_params(d_in, cfg.q_tokens, cfg.embed_dim, rng);
    ckpt.memories.resize(partition.size());
    for (std::size_t k = 0; k < partition.size(); ++k) {
      ckpt.memories[k].batch_id = static_cast<std::int64_t>(k);
    }
  }

  for (auto epoch = ckpt.epoch; epoch < cfg.epochs; ++epoch) {
    for (std::size_t k = 0; k < partition.size(); ++k) {
      StepResult step = loss_and_grad(ckpt.params, inputs[k], ckpt.memories[k], cfg, rng);
      if (!std::isfinite(step.loss.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(k));
      }
      adamw_step(ckpt.params, step.grad, ckpt.optimizer, cfg);
      update_memory(ckpt.memories[k], step.analysis);

      MetricsRow row;
      row.epoch = static_cast<int>(epoch + 1);
      row.iter = static_cast<int>(k);
      row.loss = step.loss;
      row.masked_count = static_cast<int>((step.analysis.mask.array() == 0).count());
      row.mean_cleanliness = step.analysis.estimates.mean();
      result.metrics.push_back(row);
    }
    ckpt.epoch = epoch + 1;
  }
  ckpt.epoch = std::max<std::int64_t>(ckpt.epoch, cfg.epochs);

  std::ostringstream state;
  state << rng;
  ckpt.rng_state = state.str();
  return result;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "epoch,iter,loss_total,loss_rank,loss_kl,loss_soft,masked_count,mean_cleanliness\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g,%d,%.17g\n", r.epoch, r.iter,
                  r.loss.total, r.loss.rank, r.loss.kl, r.loss.soft, r.masked_count,
                  r.mean_cleanliness);
    out += buf;
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace habit
