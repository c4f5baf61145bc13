// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>

#include "gradcheck.hpp"
#include "habit/config.hpp"
#include "habit/dataset_io.hpp"
#include "habit/dpl.hpp"
#include "habit/experiment.hpp"
#include "habit/mke.hpp"
#include "oracles.hpp"

using namespace habit;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Oracle agreement within 1e-10 on at least 100 instances per function.
Outcome formula_fidelity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> q_dist(1, 6), d_dist(1, 8), b_dist(2, 8);
  std::uniform_real_distribution<double> tau_dist(0.05, 1.0), u(0.0, 1.0), wide(0.0, 5.0);
  std::map<std::string, double> worst;
  auto note = [&](const char* name, double err) { worst[name] = std::max(worst[name], err); };
  const int n = 200;
  for (int trial = 0; trial < n; ++trial) {
    const int q = q_dist(rng), d = d_dist(rng);
    const double tau_mk = tau_dist(rng);
    const Eigen::MatrixXd fc = oracle::random_tokens(q, d, rng), ft = oracle::random_tokens(q, d, rng);
    const Eigen::MatrixXd fcs = oracle::random_tokens(q, d, rng), fts = oracle::random_tokens(q, d, rng);
    const auto ofc = oracle::from_eigen(fc), oft = oracle::from_eigen(ft);
    const auto ofcs = oracle::from_eigen(fcs), ofts = oracle::from_eigen(fts);
    note("mutual_knowledge",
         std::abs(mutual_knowledge(fc, ft, tau_mk) - oracle::mutual_knowledge(ofc, oft, tau_mk)));

    const double a = wide(rng), b = trial % 10 == 0 ? 0.0 : wide(rng);
    note("transition_rate", std::abs(transition_rate(b, a) - oracle::transition_rate(b, a)));
    note("cleanliness", std::abs(cleanliness(fc, ft, fcs, fts, tau_mk) -
                                 oracle::cleanliness(ofc, oft, ofcs, ofts, tau_mk)));

    const int bs = b_dist(rng);
    const SimilarityMatrix s = oracle::random_similarity(bs, rng), p = oracle::random_similarity(bs, rng);
    const auto m1 = oracle::random_mask(static_cast<std::size_t>(bs), rng);
    const auto m2 = oracle::random_mask(static_cast<std::size_t>(bs), rng);
    EstimationSequence e(bs);
    for (int k = 0; k < bs; ++k) e(k) = u(rng);
    const double tau = tau_dist(rng);
    note("kl_consistency", std::abs(kl_consistency(s, p, oracle::to_eigen(m1), oracle::to_eigen(m2), tau) -
                                    oracle::kl(oracle::from_eigen(s), oracle::from_eigen(p), m1, m2, tau)));
    note("soft_margin_loss", std::abs(soft_margin_loss(s, e, oracle::to_eigen(m1), 0.2) -
                                      oracle::soft_margin(oracle::from_eigen(s), oracle::from_eigen(e), m1, 0.2)));
    note("robust_contrastive_loss", std::abs(robust_contrastive_loss(s, oracle::to_eigen(m1), tau) -
                                             oracle::rank(oracle::from_eigen(s), m1, tau)));
    const double r = wide(rng), k = wide(rng), sm = wide(rng), ka = wide(rng), ga = wide(rng);
    note("total_objective", std::abs(total_objective(r, k, sm, ka, ga).total - oracle::total(r, k, sm, ka, ga)));
  }
  const double elapsed = seconds_since(t0);
  double max_err = 0;
  std::string worst_name;
  for (const auto& [name, err] : worst) {
    if (err >= max_err) {
      max_err = err;
      worst_name = name;
    }
  }
  return {max_err <= 1e-10 && elapsed < 10.0,
          fmt("%d instances x %zu functions, max abs err %.3g (%s), %.2f s", n, worst.size(), max_err,
              worst_name.c_str(), elapsed)};
}

Outcome mi_nonnegative() {
  std::mt19937_64 rng(102);
  std::uniform_int_distribution<int> q_dist(1, 8), d_dist(1, 16);
  std::uniform_real_distribution<double> tau_dist(0.01, 2.0);
  double lowest = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 1000; ++trial) {
    const int q = q_dist(rng), d = d_dist(rng);
    const Eigen::MatrixXd fc = oracle::random_tokens(q, d, rng), ft = oracle::random_tokens(q, d, rng);
    lowest = std::min(lowest, mutual_knowledge(fc, ft, tau_dist(rng)));
  }
  return {lowest >= -1e-12, fmt("1000 matrices, min MK %.3g", lowest)};
}

Outcome standard_fixed_point() {
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<int> b_dist(1, 32), q_dist(1, 6);
  double worst = 0;
  const int n = 500;
  for (int trial = 0; trial < n; ++trial) {
    const int b = b_dist(rng), q = q_dist(rng), d = 8;
    std::vector<TokenFeatureMatrix> composed, targets;
    Eigen::MatrixXd qp(b, d), tp(b, d);
    for (int k = 0; k < b; ++k) {
      composed.push_back(oracle::random_tokens(q, d, rng));
      targets.push_back(oracle::random_tokens(q, d, rng));
      qp.row(k) = pool(composed.back()).transpose();
      tp.row(k) = pool(targets.back()).transpose();
    }
    const SimilarityMatrix sim = similarity_matrix(qp, tp);
    const EstimationSequence e = estimate_batch(composed, targets, sim, 0.1, 0.1);
    worst = std::max(worst, std::abs(e(select_standard(sim, 0.1)) - 1.0));
  }
  return {worst <= 1e-9, fmt("%d batches, max |E_std - 1| %.3g", n, worst)};
}

Outcome margin_shape() {
  bool ok = dynamic_margin(1.0, 0.2) == 0.2 && dynamic_margin(0.0, 0.2) == 0.0;
  int violations = 0;
  for (int k = 1; k <= 100; ++k) {
    if (!(dynamic_margin(k / 100.0, 0.2) > dynamic_margin((k - 1) / 100.0, 0.2))) ++violations;
  }
  return {ok && violations == 0,
          fmt("margin(1)=%.17g margin(0)=%.17g, %d monotonicity violations", dynamic_margin(1.0, 0.2),
              dynamic_margin(0.0, 0.2), violations)};
}

Outcome dbscan_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(105);
  std::uniform_int_distribution<int> n_dist(1, 64), pts_dist(1, 8);
  std::uniform_real_distribution<double> eps_dist(0.005, 0.2), u(0.0, 1.0);
  std::bernoulli_distribution snap(0.3);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> x(static_cast<std::size_t>(n_dist(rng)));
    for (double& v : x) v = snap(rng) ? std::round(u(rng) * 10) / 10 : u(rng);
    const double eps = eps_dist(rng);
    const int min_pts = pts_dist(rng);
    const auto want = oracle::dbscan(x, eps, min_pts);
    if (dbscan_1d(x, eps, min_pts) != OutlierSet(want.begin(), want.end())) ++mismatches;
  }
  const double elapsed = seconds_since(t0);
  return {mismatches == 0 && elapsed < 5.0, fmt("500 instances, %d mismatches, %.2f s", mismatches, elapsed)};
}

Outcome gradient_check() {
  using namespace gradcheck;
  std::mt19937_64 rng(106);
  const std::vector<std::pair<const char*, AblationFlags>> configs = {
      {"full", {}}, {"no_kl", {Ablation::NoKl}}, {"no_soft", {Ablation::NoSoft}}, {"no_mask", {Ablation::NoMask}}};
  std::string detail;
  bool ok = true;
  std::map<std::string, double> worst;
  for (int trial = 0; trial < 5; ++trial) {
    const TinyBatch tb = tiny_batch(4, rng);
    TrainConfig cfg = grad_config();
    const EncoderParams params = init_params(kDin, cfg.q_tokens, cfg.embed_dim, rng);
    const FrozenTerms frozen = active_frozen(params, tb, cfg, rng);
    for (const auto& [name, flags] : configs) {
      cfg.ablations = flags;
      worst[name] = std::max(worst[name], max_relative_error(params, tb.inputs, frozen, cfg));
    }
  }
  for (const auto& [name, flags] : configs) {
    ok = ok && worst[name] < 1e-4;
    detail += fmt("%s %.2g ", name, worst[name]);
  }
  return {ok, "max rel err " + detail};
}

fs::path reference_config_path() { return fs::path(HABIT_SOURCE_DIR) / "configs" / "reference.json"; }

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "habit_acceptance_determinism";
  fs::remove_all(root);
  CommandOptions gen;
  gen.config = reference_config_path().string();
  gen.out = (root / "data").string();
  if (cmd_gen(gen) != 0) return {false, "gen failed"};
  double slowest = 0;
  for (const char* run : {"a", "b"}) {
    CommandOptions t;
    t.config = gen.config;
    t.data = gen.out;
    t.out = (root / run).string();
    const auto t0 = Clock::now();
    if (cmd_train(t) != 0) return {false, "train failed"};
    slowest = std::max(slowest, seconds_since(t0));
  }
  const bool same_ckpt = read_text_file(root / "a" / kCheckpointFile) == read_text_file(root / "b" / kCheckpointFile);
  const bool same_metrics = read_text_file(root / "a" / kMetricsFile) == read_text_file(root / "b" / kMetricsFile);
  fs::remove_all(root);
  return {same_ckpt && same_metrics && slowest < 300.0,
          fmt("checkpoint %s, metrics %s, slowest train %.1f s", same_ckpt ? "identical" : "DIFFER",
              same_metrics ? "identical" : "DIFFER", slowest)};
}

// Trained runs on the frozen benchmark, keyed by (sigma, seed, ablation).
class Bench {
 public:
  Bench() : base_(load_experiment_config(reference_config_path())) {}

  const ExperimentConfig& base() const { return base_; }

  ExperimentConfig config(double sigma, std::uint64_t seed, const std::string& ablation) const {
    ExperimentConfig cfg = base_;
    cfg.set_seed(seed);
    cfg.gen.sigma = sigma;
    if (!ablation.empty()) cfg.train.ablations.set(AblationFlags::parse(ablation));
    return cfg;
  }

  double recall10(double sigma, std::uint64_t seed, const std::string& ablation = {}) {
    const auto key = std::make_tuple(sigma, seed, ablation);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const ExperimentConfig cfg = config(sigma, seed, ablation);
    const Dataset data = generate(cfg.gen);
    const TrainResult tr = run_train(cfg, data);
    const double r = run_eval(tr.checkpoint, cfg, data).recall_at.at(10);
    cache_[key] = r;
    return r;
  }

 private:
  ExperimentConfig base_;
  std::map<std::tuple<double, std::uint64_t, std::string>, double> cache_;
};

Outcome detection_quality(Bench& bench) {
  const ExperimentConfig cfg = bench.config(0.5, bench.base().seed, {});
  const Dataset data = generate(cfg.gen);
  const TrainResult tr = run_train(cfg, data);
  const DetectionRun det = run_detect(tr.checkpoint, cfg, data);

  // The oracle flags a triplet iff its target's true attributes differ from
  // the intended ones.
  const auto n = static_cast<Eigen::Index>(det.samples.size());
  NoiseMask oracle_mask(n);
  std::vector<NoiseLabel> truth;
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& s = det.samples[static_cast<std::size_t>(k)];
    const auto& rec = data.records[static_cast<std::size_t>(s.id)];
    const auto& got = data.gallery[static_cast<std::size_t>(rec.target_id)].attributes;
    oracle_mask(k) = got == data.intended_attributes[static_cast<std::size_t>(s.id)] ? 1 : 0;
    truth.push_back(s.truth);
  }
  const DetectionReport oracle_report = detection_metrics(oracle_mask, EstimationSequence::Ones(n), truth);
  const double threshold = 0.9 * oracle_report.f1;
  return {det.report.f1 > threshold,
          fmt("F1 %.4f (P %.3f R %.3f AUC %.3f) vs threshold %.4f = 0.9 x oracle F1 %.4f", det.report.f1,
              det.report.precision, det.report.recall, det.report.auc, threshold, oracle_report.f1)};
}

Outcome robustness_trend(Bench& bench) {
  const std::uint64_t seed = bench.base().seed;
  const double full5 = bench.recall10(0.5, seed);
  bool ok = true;
  std::string detail = fmt("sigma 0.5: full %.4f", full5);
  for (const char* ab : {"no_mke", "no_mask", "no_rank"}) {
    const double r = bench.recall10(0.5, seed, ab);
    ok = ok && full5 > r;
    detail += fmt(", %s %.4f", ab, r);
  }
  const double full8 = bench.recall10(0.8, seed), mask8 = bench.recall10(0.8, seed, "no_mask");
  ok = ok && full8 > mask8;
  return {ok, detail + fmt("; sigma 0.8: full %.4f, no_mask %.4f", full8, mask8)};
}

Outcome degradation(Bench& bench) {
  const std::vector<double> sigmas{0.0, 0.2, 0.5, 0.8};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> mean, sd;
  for (double s : sigmas) {
    std::vector<double> r;
    for (auto seed : seeds) r.push_back(bench.recall10(s, seed));
    const double m = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
    double v = 0;
    for (double x : r) v += (x - m) * (x - m);
    mean.push_back(m);
    sd.push_back(std::sqrt(v / static_cast<double>(r.size() - 1)));
  }
  bool ok = true;
  std::string detail;
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    detail += fmt("%ssigma %.1f %.4f+-%.4f", k ? ", " : "", sigmas[k], mean[k], sd[k]);
    if (k > 0) ok = ok && mean[k] <= mean[k - 1] + std::max(sd[k], sd[k - 1]);
  }
  return {ok, detail};
}

}  // namespace

int main() {
  setenv("HABIT_LOG", "quiet", 1);
  std::printf("reference config: %s\n", reference_config_path().string().c_str());
  Bench bench;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"formula fidelity", formula_fidelity},
      {"MI nonnegativity", mi_nonnegative},
      {"standard-sample fixed point", standard_fixed_point},
      {"dynamic margin", margin_shape},
      {"DBSCAN oracle equivalence", dbscan_equivalence},
      {"gradient correctness", gradient_check},
      {"determinism", determinism},
      {"noise-detection quality", [&] { return detection_quality(bench); }},
      {"robustness trend", [&] { return robustness_trend(bench); }},
      {"degradation monotonicity", [&] { return degradation(bench); }},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("criterion %zu %s: %s | %s\n", k + 1, criteria[k].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
