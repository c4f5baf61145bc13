#include "habit/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "habit/dataset_io.hpp"
#include "habit/error.hpp"

namespace fs = std::filesystem;

namespace habit {

LogLevel log_level() {
  const char* env = std::getenv("HABIT_LOG");
  if (env == nullptr) return LogLevel::Info;
  const std::string v(env);
  if (v == "quiet") return LogLevel::Quiet;
  if (v == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

namespace {

void log(LogLevel level, const std::string& msg) {
  if (level == LogLevel::Quiet) return;
  if (static_cast<int>(level) <= static_cast<int>(log_level())) std::cerr << "[habit] " << msg << '\n';
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

const std::string& required(const std::optional<std::string>& v, const char* flag) {
  if (!v || v->empty()) throw ConfigError(std::string("--") + flag + " is required");
  return *v;
}

ExperimentConfig resolve_config(const CommandOptions& opts, const std::optional<fs::path>& fallback) {
  ExperimentConfig cfg;
  if (opts.config) {
    cfg = load_experiment_config(*opts.config);
  } else if (fallback && fs::exists(*fallback)) {
    cfg = load_experiment_config(*fallback);
  }
  if (opts.seed) cfg.set_seed(*opts.seed);
  if (opts.ks) cfg.eval.ks = parse_int_list(*opts.ks, "--ks");
  validate(cfg);
  return cfg;
}

template <typename Fn>
int guarded(const char* command, Fn&& body) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    std::cerr << "habit " << command << ": " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "habit " << command << ": " << e.what() << '\n';
    return 5;
  }
}

std::vector<TripletRecord> training_split(const ExperimentConfig& cfg, const Dataset& data) {
  Split s = split(data.records, cfg.eval.test_fraction, cfg.seed);
  if (s.warning) log(LogLevel::Info, "fewer clean records than the requested test split size");
  return std::move(s.train);
}

void write_config(const fs::path& dir, const ExperimentConfig& cfg) {
  write_text_file(dir / kResolvedConfigFile, to_json_string(cfg, true));
}

}  // namespace

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Io: return 3;
    case ErrorKind::Format: return 4;
    default: return 5;
  }
}

TrainResult run_train(const ExperimentConfig& cfg, const Dataset& data) {
  const std::vector<TripletRecord> train_records = training_split(cfg, data);
  if (train_records.size() < 2) throw ConfigError("dataset: fewer than two training records");
  TrainData td{train_records, &data.gallery};
  return train(td, cfg.train, to_json_string(cfg, false));
}

ExperimentConfig checkpoint_config(const Checkpoint& ckpt) {
  try {
    return parse_experiment_config(ckpt.config_json);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint carries an unusable configuration: ") + e.what());
  }
}

DetectionRun run_detect(const Checkpoint& ckpt, const ExperimentConfig& cfg, const Dataset& data) {
  const std::vector<TripletRecord> records = training_split(cfg, data);
  const auto partition = batch_partition(records.size(), cfg.train.batch_size, cfg.seed);
  if (ckpt.epoch > 0 && ckpt.memories.size() != partition.size()) {
    throw FormatError("checkpoint history does not match this dataset's batch partition");
  }
  std::mt19937_64 rng(cfg.seed ^ 0xa0761d6478bd642fULL);
  DetectionRun run;
  run.samples.resize(records.size());
  for (std::size_t k = 0; k < partition.size(); ++k) {
    const BatchInputs inputs = gather_batch(records, partition[k], data.gallery);
    const BatchMemory memory = k < ckpt.memories.size() ? ckpt.memories[k] : BatchMemory{};
    const BatchAnalysis a = analyze_batch(ckpt.params, inputs, memory, cfg.train, rng);
    for (std::size_t b = 0; b < partition[k].size(); ++b) {
      const std::size_t idx = partition[k][b];
      const auto bi = static_cast<Eigen::Index>(b);
      run.samples[idx] = {records[idx].id, a.estimates(bi), a.mask(bi), records[idx].noise_label};
    }
  }
  std::sort(run.samples.begin(), run.samples.end(),
            [](const SampleDetection& x, const SampleDetection& y) { return x.id < y.id; });

  const auto n = static_cast<Eigen::Index>(run.samples.size());
  NoiseMask mask(n);
  EstimationSequence estimates(n);
  std::vector<NoiseLabel> truth(run.samples.size());
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto& s = run.samples[static_cast<std::size_t>(b)];
    mask(b) = s.mask;
    estimates(b) = s.cleanliness;
    truth[static_cast<std::size_t>(b)] = s.truth;
  }
  run.report = detection_metrics(mask, estimates, truth);
  return run;
}

RetrievalReport run_eval(const Checkpoint& ckpt, const ExperimentConfig& cfg, const Dataset& data) {
  const Split s = split(data.records, cfg.eval.test_fraction, cfg.seed);
  return evaluate_retrieval(ckpt.params, s.test, data.gallery, cfg.eval, cfg.seed);
}

std::string detection_samples_to_csv(const std::vector<SampleDetection>& rows) {
  std::string out = "id,cleanliness,mask,truth\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%d,%s\n", static_cast<long long>(r.id), r.cleanliness,
                  r.mask, to_string(r.truth));
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen(const CommandOptions& opts) {
  return guarded("gen", [&] {
    const fs::path out = required(opts.out, "out");
    ExperimentConfig cfg = resolve_config(opts, std::nullopt);
    cfg.out_dir = out.string();
    cfg.data_dir = out.string();
    const Dataset data = generate(cfg.gen);
    write_dataset(out, data);
    write_config(out, cfg);
    log(LogLevel::Info, "wrote " + std::to_string(data.records.size()) + " triplets and " +
                            std::to_string(data.gallery.size()) + " gallery entries to " + out.string());
  });
}

int cmd_train(const CommandOptions& opts) {
  return guarded("train", [&] {
    const fs::path data_dir = required(opts.data, "data");
    const fs::path out = required(opts.out, "out");
    ExperimentConfig cfg = resolve_config(opts, data_dir / kResolvedConfigFile);
    cfg.data_dir = data_dir.string();
    cfg.out_dir = out.string();
    const Dataset data = read_dataset(data_dir);
    ensure_dir(out);
    const auto start = std::chrono::steady_clock::now();
    const TrainResult result = run_train(cfg, data);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    save_checkpoint(result.checkpoint, out / kCheckpointFile);
    write_text_file(out / kMetricsFile, metrics_to_csv(result.metrics));
    write_config(out, cfg);
    log(LogLevel::Info, "trained " + std::to_string(cfg.train.epochs) + " epochs in " +
                            std::to_string(secs) + " s");
  });
}

int cmd_detect(const CommandOptions& opts) {
  return guarded("detect", [&] {
    const fs::path out = required(opts.out, "out");
    const fs::path ckpt_path = opts.checkpoint ? fs::path(*opts.checkpoint) : out / kCheckpointFile;
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    ExperimentConfig cfg = checkpoint_config(ckpt);
    const fs::path data_dir = required(opts.data, "data");
    cfg.data_dir = data_dir.string();
    cfg.out_dir = out.string();
    const Dataset data = read_dataset(data_dir);
    const DetectionRun run = run_detect(ckpt, cfg, data);
    ensure_dir(out);
    write_text_file(out / kDetectionSamplesFile, detection_samples_to_csv(run.samples));
    write_text_file(out / kDetectionFile, detection_report_to_csv(run.report));
    write_config(out, cfg);
    log(LogLevel::Info, "detection F1 " + std::to_string(run.report.f1) + ", AUC " +
                            std::to_string(run.report.auc));
  });
}

int cmd_eval(const CommandOptions& opts) {
  return guarded("eval", [&] {
    const fs::path out = required(opts.out, "out");
    const fs::path ckpt_path = opts.checkpoint ? fs::path(*opts.checkpoint) : out / kCheckpointFile;
    std::vector<int> ks;
    if (opts.ks) ks = parse_int_list(*opts.ks, "--ks");
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    ExperimentConfig cfg = checkpoint_config(ckpt);
    if (!ks.empty()) cfg.eval.ks = ks;
    const fs::path data_dir = required(opts.data, "data");
    cfg.data_dir = data_dir.string();
    cfg.out_dir = out.string();
    const Dataset data = read_dataset(data_dir);
    const RetrievalReport report = run_eval(ckpt, cfg, data);
    ensure_dir(out);
    write_text_file(out / kReportFile, retrieval_report_to_csv(report));
    write_config(out, cfg);
  });
}

int cmd_sweep(const CommandOptions& opts) {
  int status = 0;
  std::vector<std::string> values;
  ExperimentConfig base;
  fs::path out;
  std::string axis;
  status = guarded("sweep", [&] {
    out = required(opts.out, "out");
    axis = required(opts.axis, "axis");
    base = resolve_config(opts, std::nullopt);
    std::istringstream in(required(opts.values, "values"));
    std::string item;
    while (std::getline(in, item, ',')) {
      if (!item.empty()) values.push_back(item);
    }
    if (values.empty()) throw ConfigError("--values: empty list");
    // Reject a bad axis before any run starts.
    ExperimentConfig probe = base;
    set_axis_value(probe, axis, values.front());
    ensure_dir(out);
  });
  if (status != 0) return status;

  std::string summary = "axis,value,status";
  for (int k : base.eval.ks) summary += ",recall@" + std::to_string(k);
  summary += ",detection_f1,message\n";

  int first_failure = 0;
  for (const std::string& value : values) {
    const fs::path run_dir = out / (axis + "_" + value);
    RetrievalReport report;
    DetectionReport detection;
    std::string message;
    const int rc = guarded("sweep", [&] {
      ExperimentConfig cfg = base;
      set_axis_value(cfg, axis, value);
      const fs::path data_dir = run_dir / "data";
      cfg.data_dir = data_dir.string();
      cfg.out_dir = run_dir.string();
      ensure_dir(data_dir);
      const Dataset data = generate(cfg.gen);
      write_dataset(data_dir, data);
      write_config(data_dir, cfg);

      const TrainResult result = run_train(cfg, data);
      save_checkpoint(result.checkpoint, run_dir / kCheckpointFile);
      write_text_file(run_dir / kMetricsFile, metrics_to_csv(result.metrics));
      write_config(run_dir, cfg);

      const DetectionRun det = run_detect(result.checkpoint, cfg, data);
      write_text_file(run_dir / kDetectionSamplesFile, detection_samples_to_csv(det.samples));
      write_text_file(run_dir / kDetectionFile, detection_report_to_csv(det.report));
      detection = det.report;

      report = run_eval(result.checkpoint, cfg, data);
      write_text_file(run_dir / kReportFile, retrieval_report_to_csv(report));
      log(LogLevel::Info, axis + "=" + value + " done");
    });
    if (rc != 0) {
      if (first_failure == 0) first_failure = rc;
      message = "exit code " + std::to_string(rc);
    }
    summary += axis + "," + value + "," + (rc == 0 ? "ok" : "error");
    char buf[64];
    for (int k : base.eval.ks) {
      const double v = rc == 0 ? report.recall_at.at(k) : 0.0;
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      summary += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g", rc == 0 ? detection.f1 : 0.0);
    summary += buf;
    summary += "," + message + "\n";
  }
  const int rc = guarded("sweep", [&] { write_text_file(out / kSweepSummaryFile, summary); });
  return first_failure != 0 ? first_failure : rc;
}

}  // namespace habit
