// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

// alora gen-model | verify | bench | train

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "alora/adapter.hpp"
#include "alora/bench.hpp"
#include "alora/checkpoint.hpp"
#include "alora/error.hpp"
#include "alora/synthetic.hpp"
#include "alora/trainer.hpp"
#include "alora/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct ModelArgs {
  alora::ModelConfig config;
  std::uint64_t seed = 0;
  std::string checkpoint;

  void add_config_flags(CLI::App* app) {
    app->add_option("--layers", config.n_layers, "Transformer layers");
    app->add_option("--heads", config.n_heads, "Attention heads");
    app->add_option("--d-model", config.d_model, "Model width");
    app->add_option("--vocab", config.vocab_size, "Vocabulary size");
    app->add_option("--max-positions", config.max_positions,
                    "Longest supported sequence");
    app->add_option("--rope-theta", config.rope_theta, "Rotary base");
  }

  // The checkpoint when given, else a seeded random model.
  std::shared_ptr<const alora::ModelWeights> load() const {
    if (!checkpoint.empty()) {
      return std::make_shared<const alora::ModelWeights>(
          alora::load_checkpoint(checkpoint));
    }
    return std::make_shared<const alora::ModelWeights>(
        alora::random_model(resolved(), seed));
  }

  alora::ModelConfig resolved() const {
    alora::ModelConfig c = config;
    if (c.n_heads > 0) c.d_head = c.d_model / c.n_heads;
    c.validate();
    return c;
  }
};

int cmd_gen_model(const ModelArgs& m, const std::string& out) {
  const alora::ModelWeights w = alora::random_model(m.resolved(), m.seed);
  alora::save_checkpoint(w, out);
  std::cout << "wrote " << out << '\n';
  return kExitOk;
}

int cmd_verify(const ModelArgs& m, std::size_t trials,
               const std::string& adapter_path, bool flip) {
  alora::VerifyOptions o;
  o.trials = trials;
  o.seed = m.seed;
  std::optional<alora::ModelWeights> weights;
  if (!m.checkpoint.empty()) {
    weights = alora::load_checkpoint(m.checkpoint);
    o.weights = &*weights;
  } else {
    o.random_config = m.resolved();
  }
  std::optional<alora::AdapterSpec> adapter;
  if (!adapter_path.empty()) {
    adapter = alora::load_adapter(adapter_path);
    o.adapter = &*adapter;
  }
  alora::VerifyReport report;
  if (flip) {
    o.flip_pre_invocation_verdict = true;
    report.checks.push_back(alora::check_kv_prefix(o));
  } else {
    report = alora::run_verify_suite(o);
  }
  std::cout << alora::format_report(report);
  return report.passed() ? kExitOk : kExitFailed;
}

int cmd_bench(ModelArgs m, const alora::BenchPlan& plan,
              const std::string& out) {
  m.seed = plan.seed;
  const auto weights = m.load();
  const alora::BenchOutput result = alora::run_bench(weights, plan);
  if (out.empty()) {
    alora::write_bench_csv(std::cout, result.rows);
  } else {
    std::ofstream file(out);
    if (!file) throw alora::IoError("cannot write " + out);
    alora::write_bench_csv(file, result.rows);
    if (!file) throw alora::IoError("failed writing " + out);
  }
  const alora::SpeedupReport report = alora::speedup_report(result.measurements);
  bool exact = true;
  for (const auto& meas : result.measurements) {
    exact = exact && alora::predict_first_token(meas.query).matches(meas.first_token);
  }
  for (const auto& d : report.diagnostics) std::cerr << "note: " << d << '\n';
  for (const auto& r : report.rows) {
    std::cerr << "T_cache=" << r.t_cache << " N=" << r.n_adapters
              << " LoRA/aLoRA first-token flops " << r.measured_ratio << '\n';
  }
  if (!exact) {
    std::cerr << "measured counters deviate from the prediction\n";
    return kExitFailed;
  }
  return kExitOk;
}

struct TrainArgs {
  alora::TrainConfig config;
  std::string task = "copy_key";
  std::string dataset;
  std::string eval_dataset;
  alora::TaskSizes sizes;
  std::size_t eval_examples = 200;
  std::string out = "adapter.alad";
  std::string metrics;
  std::string mode = "alora";
  std::string precision;
};

int cmd_train(const ModelArgs& m, TrainArgs a) {
  const auto weights = m.load();
  const alora::TaskKind kind = alora::parse_task(a.task);
  a.config.seed = m.seed;
  a.config.precision = a.precision.empty()
                           ? alora::precision_from_env(alora::Precision::kF32)
                           : alora::parse_precision(a.precision);

  std::vector<alora::SftExample> train_set, eval_set;
  if (!a.dataset.empty()) {
    train_set = alora::read_dataset(a.dataset);
  } else {
    train_set = alora::make_synthetic_task(kind, a.sizes, m.seed + 1);
  }
  if (!a.eval_dataset.empty()) {
    eval_set = alora::read_dataset(a.eval_dataset);
  } else {
    alora::TaskSizes held_out = a.sizes;
    held_out.examples = a.eval_examples;
    eval_set = alora::make_synthetic_task(kind, held_out, m.seed + 2);
  }

  const alora::AdapterSpec initial =
      alora::init_adapter(weights->config, a.config, 1, alora::parse_mode(a.mode),
                          alora::task_invocation(kind));
  const alora::TrainResult result =
      alora::train(train_set, initial, *weights, a.config, &eval_set);
  alora::save_adapter(result.adapter, a.out);
  if (!a.metrics.empty()) {
    std::ofstream file(a.metrics);
    if (!file) throw alora::IoError("cannot write " + a.metrics);
    alora::write_metrics_csv(file, result.history);
  }
  const double em = alora::exact_match(eval_set, result.adapter, *weights);
  std::cout << "final exact_match " << em << '\n';
  std::cout << "wrote " << a.out << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aLoRA inference engine toolkit"};
  app.require_subcommand(1);

  ModelArgs model;
  std::string out;
  std::size_t trials = 100;
  std::string adapter_path;
  bool flip = false;
  alora::BenchPlan plan;
  TrainArgs train;

  auto* gen = app.add_subcommand("gen-model", "Write a random checkpoint");
  model.add_config_flags(gen);
  gen->add_option("--seed", model.seed, "RNG seed");
  gen->add_option("--out", out, "Checkpoint path")->required();

  auto* verify = app.add_subcommand("verify", "Run the invariant suite");
  model.add_config_flags(verify);
  verify->add_option("--checkpoint", model.checkpoint,
                     "Checkpoint (default: a random model per trial)");
  verify->add_option("--seed", model.seed, "RNG seed");
  verify->add_option("--trials", trials, "Trials per check");
  verify->add_option("--adapter", adapter_path,
                     "aLoRA adapter to check instead of random ones");
  verify->add_flag("--flip-verdict", flip,
                   "Force one pre-invocation position to adapted weights; "
                   "the KV-prefix check must then fail");

  auto* bench = app.add_subcommand("bench", "Cost and latency benchmark");
  model.add_config_flags(bench);
  bench->add_option("--checkpoint", model.checkpoint,
                    "Checkpoint (default: random model from --seed)");
  bench->add_option("--seed", plan.seed, "RNG seed");
  bench->add_option("--prompt-lengths", plan.prompt_lengths)->delimiter(',');
  bench->add_option("--answer-tokens", plan.answer_tokens);
  bench->add_option("--eval-tokens", plan.eval_tokens);
  bench->add_option("--new-tokens", plan.new_tokens);
  bench->add_option("--n-adapters", plan.n_adapters)->delimiter(',');
  bench->add_option("--lora-rank", plan.lora_rank);
  bench->add_option("--alora-rank", plan.alora_rank);
  bench->add_option("--repetitions", plan.repetitions);
  bench->add_option("--out", out, "CSV path (default: stdout)");

  auto* tr = app.add_subcommand("train", "Train an adapter on a toy task");
  model.add_config_flags(tr);
  tr->add_option("--checkpoint", model.checkpoint,
                 "Checkpoint (default: random model from --seed)");
  tr->add_option("--seed", model.seed, "RNG seed");
  tr->add_option("--task", train.task, "copy_key or classify_marker");
  tr->add_option("--dataset", train.dataset, "Training JSONL");
  tr->add_option("--eval-dataset", train.eval_dataset, "Held-out JSONL");
  tr->add_option("--train-examples", train.sizes.examples);
  tr->add_option("--eval-examples", train.eval_examples);
  tr->add_option("--distractors", train.sizes.distractors);
  tr->add_option("--n-values", train.sizes.n_values);
  tr->add_option("--distractor-vocab", train.sizes.distractor_vocab);
  tr->add_option("--mode", train.mode, "alora or lora");
  tr->add_option("--steps", train.config.steps);
  tr->add_option("--lr", train.config.learning_rate);
  tr->add_option("--batch-size", train.config.batch_size);
  tr->add_option("--rank", train.config.rank);
  tr->add_option("--alpha", train.config.alpha);
  tr->add_option("--dropout", train.config.dropout_rate);
  tr->add_option("--eval-every", train.config.eval_every);
  tr->add_option("--precision", train.precision,
                 "f32 or f64 (default: ALORA_PRECISION, else f32)");
  tr->add_option("--out", train.out, "Adapter path");
  tr->add_option("--metrics", train.metrics, "Metrics CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_model(model, out);
    if (*verify) return cmd_verify(model, trials, adapter_path, flip);
    if (*bench) return cmd_bench(model, plan, out);
    if (*tr) return cmd_train(model, train);
  } catch (const alora::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const alora::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const alora::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailed;
  } catch (const alora::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
