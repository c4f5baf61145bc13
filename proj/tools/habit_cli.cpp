// habit: generate synthetic noisy-triplet data, train, detect, evaluate, sweep.

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "habit/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Robust composed-retrieval training under noisy triplet correspondence"};
  app.require_subcommand(1);

  habit::CommandOptions opts;
  std::string config, data, out, checkpoint, ks, axis, values;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "Experiment configuration (JSON)");
    cmd->add_option("--out", out, "Output directory")->required();
    cmd->add_option("--seed", seed, "Override the configured seed");
  };

  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic triplet dataset and gallery");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "Train encoders on a generated dataset");
  add_common(train);
  train->add_option("--data", data, "Dataset directory")->required();

  CLI::App* detect = app.add_subcommand("detect", "Per-sample cleanliness and noise masks");
  detect->add_option("--out", out, "Output directory")->required();
  detect->add_option("--data", data, "Dataset directory")->required();
  detect->add_option("--checkpoint", checkpoint, "Checkpoint (default: <out>/checkpoint.bin)");

  CLI::App* eval = app.add_subcommand("eval", "Recall@K on the clean test split");
  eval->add_option("--out", out, "Output directory")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default: <out>/checkpoint.bin)");
  eval->add_option("--ks", ks, "Comma-separated K values, e.g. 1,5,10,50");

  CLI::App* sweep = app.add_subcommand("sweep", "One full run per value of sigma, kappa or gamma");
  add_common(sweep);
  sweep->add_option("--axis", axis, "sigma | kappa | gamma")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  auto set = [](std::optional<std::string>& dst, const std::string& v) {
    if (!v.empty()) dst = v;
  };
  set(opts.config, config);
  set(opts.data, data);
  set(opts.out, out);
  set(opts.checkpoint, checkpoint);
  set(opts.ks, ks);
  set(opts.axis, axis);
  set(opts.values, values);
  for (CLI::App* cmd : {gen, train, sweep}) {
    if (cmd->parsed() && cmd->count("--seed") > 0) opts.seed = seed;
  }

  if (gen->parsed()) return habit::cmd_gen(opts);
  if (train->parsed()) return habit::cmd_train(opts);
  if (detect->parsed()) return habit::cmd_detect(opts);
  if (eval->parsed()) return habit::cmd_eval(opts);
  return habit::cmd_sweep(opts);
}
