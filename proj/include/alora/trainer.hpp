// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

// Supervised finetuning of adapter deltas with the base model frozen.
//
// The forward pass shares every kernel with the inference engine, so in f32
// the rows it computes are bit-identical to engine rows. Gradients are
// reverse-mode by hand over the fixed layer graph. Positions before the
// activation point depend on no adapter parameter, so the backward sweep
// stops there.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "alora/adapter.hpp"
#include "alora/model.hpp"
#include "alora/rng.hpp"
#include "alora/tensor.hpp"

namespace alora {

struct SftExample {
  std::vector<TokenId> context;
  std::vector<TokenId> invocation;
  std::vector<TokenId> target;

  std::vector<TokenId> sequence() const;
  // Activation starts one token after the invocation starts.
  std::size_t t_invoke() const { return context.size() + 1; }
  std::size_t first_target() const {
    return context.size() + invocation.size();
  }
  bool operator==(const SftExample&) const = default;
};

enum class Precision : std::uint8_t { kF32, kF64 };

Precision parse_precision(const std::string& name);
// Reads ALORA_PRECISION (f32|f64); unset yields `fallback`.
Precision precision_from_env(Precision fallback = Precision::kF32);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  std::size_t rank = 8;
  double alpha = 32.0;
  double dropout_rate = 0.05;
  std::uint64_t seed = 0;
  Precision precision = Precision::kF32;
  std::size_t eval_every = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

template <typename T>
struct LowRankPair {
  Matrix<T> a;  // d_model × r
  Matrix<T> b;  // r × d_model
};

// Trainable copy of an adapter's deltas in precision T.
template <typename T>
struct AdapterParams {
  std::vector<std::array<std::optional<LowRankPair<T>>, 3>> layers;
  T scale = T(1);  // alpha / r

  static AdapterParams from_spec(const AdapterSpec& spec);
  void write_to(AdapterSpec& spec) const;
  AdapterParams zeros_like() const;
  std::size_t parameter_count() const;

  // Visits every trainable tensor in a fixed order.
  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& layer : layers) {
      for (auto& slot : layer) {
        if (!slot) continue;
        f(slot->a);
        f(slot->b);
      }
    }
  }
};

struct DropoutSettings {
  double rate = 0.0;
  Rng* rng = nullptr;  // null disables dropout
};

// Logits for every position of example.sequence(), positions × vocab.
template <typename T>
Matrix<T> sequence_logits(const Weights<T>& weights,
                          const AdapterParams<T>& params, AdapterMode mode,
                          const SftExample& example);

// Rotated keys and values per layer (positions × d_model) from the same
// training forward pass, for purity checks against the inference cache.
template <typename T>
struct SequenceKv {
  std::vector<Matrix<T>> keys;
  std::vector<Matrix<T>> values;
};

template <typename T>
SequenceKv<T> sequence_kv(const Weights<T>& weights,
                          const AdapterParams<T>& params, AdapterMode mode,
                          const SftExample& example);

// Mean next-token cross-entropy over target positions only; row p - 1 of
// `logits` predicts token p. Throws ContractViolation for empty targets or
// logits that do not cover the sequence.
template <typename T>
T sft_loss(const Matrix<T>& logits, const SftExample& example);

template <typename T>
struct LossAndGradient {
  T loss = T(0);
  AdapterParams<T> gradient;
};

// Exact gradient of sft_loss with respect to every A and B entry.
template <typename T>
LossAndGradient<T> backward_adapter(const SftExample& example,
                                    const AdapterParams<T>& params,
                                    AdapterMode mode,
                                    const Weights<T>& weights,
                                    const DropoutSettings& dropout = {});

// Sum of per-example losses and gradients.
template <typename T>
LossAndGradient<T> backward_batch(const std::vector<const SftExample*>& batch,
                                  const AdapterParams<T>& params,
                                  AdapterMode mode, const Weights<T>& weights,
                                  const DropoutSettings& dropout = {});

// Throws ConfigError unless the example has a target, and its invocation
// starts with the adapter's invocation sequence at the last occurrence, so
// scanning and structure agree on t_invoke.
void validate_example(const SftExample& example, const AdapterSpec& spec);

// A ~ N(0, 0.02²), B = 0: the adapter starts out exactly equal to the base.
AdapterSpec init_adapter(const ModelConfig& config, const TrainConfig& train,
                         AdapterId id, AdapterMode mode,
                         std::vector<TokenId> invocation_sequence);

struct MetricsRow {
  std::size_t step = 0;
  double loss = 0.0;
  std::optional<double> eval_exact_match;
};

struct TrainResult {
  AdapterSpec adapter;
  std::vector<MetricsRow> history;
};

// Adam on A and B only. Deterministic for a fixed seed. Evaluates exact
// match on `eval_set` (or the training data) every eval_every steps and at
// the end. Throws DivergenceError on a non-finite loss.
TrainResult train(const std::vector<SftExample>& dataset,
                  const AdapterSpec& initial, const ModelWeights& weights,
                  const TrainConfig& config,
                  const std::vector<SftExample>* eval_set = nullptr);

// Fraction of examples whose every target token is the greedy pick (EOS
// masked) under teacher forcing, computed in f32.
double exact_match(const std::vector<SftExample>& examples,
                   const AdapterSpec& adapter, const ModelWeights& weights);

// JSON lines with integer arrays `context`, `invocation`, `target`.
std::vector<SftExample> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::vector<SftExample>& examples,
                   const std::filesystem::path& path);

// CSV `step,loss,eval_exact_match`; the last field is empty on steps
// without an evaluation.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

}  // namespace alora
