// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "alora/error.hpp"
#include "alora/forward.hpp"
#include "alora/kernels.hpp"

namespace alora {

std::vector<TokenId> SftExample::sequence() const {
  std::vector<TokenId> out;
  out.reserve(context.size() + invocation.size() + target.size());
  out.insert(out.end(), context.begin(), context.end());
  out.insert(out.end(), invocation.begin(), invocation.end());
  out.insert(out.end(), target.begin(), target.end());
  return out;
}

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::kF32;
  if (name == "f64") return Precision::kF64;
  throw ConfigError("unknown precision '" + name + "' (expected f32 or f64)");
}

Precision precision_from_env(Precision fallback) {
  const char* value = std::getenv("ALORA_PRECISION");
  if (value == nullptr || *value == '\0') return fallback;
  return parse_precision(value);
}

// ---------------------------------------------------------------------------
// Parameter containers

template <typename T>
AdapterParams<T> AdapterParams<T>::from_spec(const AdapterSpec& spec) {
  AdapterParams out;
  out.scale = static_cast<T>(spec.alpha) / static_cast<T>(spec.rank);
  out.layers.resize(spec.layers.size());
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& slot = spec.layers[l][j];
      if (!slot) continue;
      out.layers[l][j] =
          LowRankPair<T>{slot->a.template cast<T>(), slot->b.template cast<T>()};
    }
  }
  return out;
}

template <typename T>
void AdapterParams<T>::write_to(AdapterSpec& spec) const {
  if (spec.layers.size() != layers.size()) {
    throw ContractViolation("adapter layer count changed during training");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& src = layers[l][j];
      auto& dst = spec.layers[l][j];
      if (!src) continue;
      dst->a = src->a.template cast<float>();
      dst->b = src->b.template cast<float>();
    }
  }
}

template <typename T>
AdapterParams<T> AdapterParams<T>::zeros_like() const {
  AdapterParams out;
  out.scale = scale;
  out.layers.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& slot = layers[l][j];
      if (!slot) continue;
      out.layers[l][j] = LowRankPair<T>{Matrix<T>(slot->a.rows(), slot->a.cols()),
                                        Matrix<T>(slot->b.rows(), slot->b.cols())};
    }
  }
  return out;
}

template <typename T>
std::size_t AdapterParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    for (const auto& slot : layer) {
      if (slot) n += slot->a.size() + slot->b.size();
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// Taped forward pass

namespace {

template <typename T>
struct LayerTape {
  Matrix<T> input;   // residual stream entering the layer
  Matrix<T> normed;  // attention-norm output
  std::vector<T> inv_attn;
  std::array<Matrix<T>, 3> low;   // x·A after dropout, adapted rows only
  std::array<Matrix<T>, 3> keep;  // dropout multipliers; empty without dropout
  Matrix<T> q, k, v;              // q and k rotated
  std::vector<std::vector<T>> probs;  // per position: n_heads × (p + 1)
  Matrix<T> heads;                    // attention output before W_O
  Matrix<T> mid;                      // residual after attention
  std::vector<T> inv_mlp;
  Matrix<T> mlp_normed;
  Matrix<T> up;  // before the activation
};

template <typename T>
struct Tape {
  std::size_t length = 0;
  std::size_t adapted_from = 0;
  std::vector<LayerTape<T>> layers;
  Matrix<T> final_input;
  std::vector<T> inv_final;
  Matrix<T> final_normed;
  Matrix<T> logits;
};

template <typename T>
void rotate_heads(std::span<T> row, std::size_t position,
                  const ModelConfig& c) {
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    kernels::rope<T>(row.subspan(h * c.d_head, c.d_head),
                     static_cast<double>(position), c.rope_theta);
  }
}

template <typename T>
void unrotate_heads(std::span<T> row, std::size_t position,
                    const ModelConfig& c) {
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    kernels::rope_backward<T>(row.subspan(h * c.d_head, c.d_head),
                              static_cast<double>(position), c.rope_theta);
  }
}

template <typename T>
void check_params(const AdapterParams<T>& params, const ModelConfig& c) {
  if (params.layers.size() != c.n_layers) {
    throw ConfigError("adapter has " + std::to_string(params.layers.size()) +
                      " layers, model has " + std::to_string(c.n_layers));
  }
  for (const auto& layer : params.layers) {
    for (const auto& slot : layer) {
      if (!slot) continue;
      if (slot->a.rows() != c.d_model || slot->b.cols() != c.d_model ||
          slot->a.cols() != slot->b.rows()) {
        throw ConfigError("adapter delta does not match d_model");
      }
    }
  }
}

template <typename T>
Tape<T> run_forward(const Weights<T>& w, const AdapterParams<T>& params,
                    AdapterMode mode, const SftExample& example,
                    const DropoutSettings& dropout) {
  const auto& c = w.config;
  check_params(params, c);
  const std::vector<TokenId> tokens = example.sequence();
  const std::size_t n = tokens.size();
  const std::size_t d = c.d_model;
  if (n == 0) throw ContractViolation("training example is empty");
  if (n > c.max_positions) {
    throw ConfigError("example of " + std::to_string(n) +
                      " tokens exceeds max_positions");
  }
  const bool use_dropout = dropout.rng != nullptr && dropout.rate > 0.0;
  if (use_dropout && dropout.rate >= 1.0) {
    throw ConfigError("dropout rate must be below 1");
  }

  Tape<T> tape;
  tape.length = n;
  tape.adapted_from =
      mode == AdapterMode::kLora ? 0 : std::min(example.t_invoke(), n);
  const std::size_t b = tape.adapted_from;

  Matrix<T> hidden(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] >= c.vocab_size) {
      throw ContractViolation("token id " + std::to_string(tokens[i]) +
                              " outside vocabulary");
    }
    const auto emb = w.token_embedding.row(tokens[i]);
    std::copy(emb.begin(), emb.end(), hidden.row(i).begin());
  }

  std::vector<T> scratch(d), scores, attn_out(d), down(d);
  const T keep_scale = use_dropout ? T(1) / static_cast<T>(1.0 - dropout.rate)
                                   : T(1);
  tape.layers.resize(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lw = w.layers[l];
    auto& lt = tape.layers[l];
    lt.input = hidden;
    lt.normed = Matrix<T>(n, d);
    lt.inv_attn.assign(n, T(0));
    lt.q = Matrix<T>(n, d);
    lt.k = Matrix<T>(n, d);
    lt.v = Matrix<T>(n, d);
    Matrix<T>* outs[3] = {&lt.q, &lt.k, &lt.v};
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& slot = params.layers[l][j];
      if (!slot) continue;
      lt.low[j] = Matrix<T>(n, slot->a.cols());
      if (use_dropout) lt.keep[j] = Matrix<T>(n, slot->a.cols());
    }

    for (std::size_t i = 0; i < n; ++i) {
      lt.inv_attn[i] =
          kernels::rms_norm<T>(hidden.row(i), lw.attn_norm, lt.normed.row(i));
      const auto xi = lt.normed.row(i);
      for (std::size_t j = 0; j < 3; ++j) {
        auto y = outs[j]->row(i);
        kernels::matvec<T>(xi, lw.projection(j), y);
        const auto& slot = params.layers[l][j];
        if (!slot || i < b) continue;
        auto low = lt.low[j].row(i);
        kernels::matvec<T>(xi, slot->a, low);
        if (use_dropout) {
          auto keep = lt.keep[j].row(i);
          for (std::size_t r = 0; r < low.size(); ++r) {
            keep[r] = dropout.rng->uniform() < dropout.rate ? T(0) : keep_scale;
            low[r] *= keep[r];
          }
        }
        kernels::add_low_rank<T>(low, slot->b, params.scale, y, scratch);
      }
      rotate_heads<T>(lt.q.row(i), i, c);
      rotate_heads<T>(lt.k.row(i), i, c);
    }

    const kernels::KvChunk<T> chunk{lt.k.data(), lt.v.data(), n};
    const std::span<const kernels::KvChunk<T>> chunks(&chunk, 1);
    lt.heads = Matrix<T>(n, d);
    lt.mid = Matrix<T>(n, d);
    lt.probs.resize(n);
    lt.inv_mlp.assign(n, T(0));
    lt.mlp_normed = Matrix<T>(n, d);
    lt.up = Matrix<T>(n, c.mlp_width());
    std::vector<T> act(c.mlp_width());
    for (std::size_t i = 0; i < n; ++i) {
      lt.probs[i].assign(c.n_heads * (i + 1), T(0));
      kernels::attend_row<T>(lt.q.row(i), chunks, i + 1, c.n_heads, c.d_head,
                             lt.heads.row(i), scores, lt.probs[i].data());
      kernels::matvec<T>(lt.heads.row(i), lw.wo, attn_out);
      auto h = hidden.row(i);
      for (std::size_t j = 0; j < d; ++j) h[j] += attn_out[j];
      std::copy(h.begin(), h.end(), lt.mid.row(i).begin());
      lt.inv_mlp[i] =
          kernels::rms_norm<T>(h, lw.mlp_norm, lt.mlp_normed.row(i));
      auto up = lt.up.row(i);
      kernels::matvec<T>(lt.mlp_normed.row(i), lw.w_up, up);
      for (std::size_t j = 0; j < act.size(); ++j) act[j] = kernels::gelu(up[j]);
      kernels::matvec<T>(act, lw.w_down, down);
      for (std::size_t j = 0; j < d; ++j) h[j] += down[j];
    }
  }

  tape.final_input = hidden;
  tape.final_normed = Matrix<T>(n, d);
  tape.inv_final.assign(n, T(0));
  tape.logits = Matrix<T>(n, c.vocab_size);
  for (std::size_t i = 0; i < n; ++i) {
    tape.inv_final[i] = kernels::rms_norm<T>(hidden.row(i), w.final_norm,
                                             tape.final_normed.row(i));
    kernels::matvec<T>(tape.final_normed.row(i), w.unembedding,
                       tape.logits.row(i));
  }
  return tape;
}

// Softmax of one logit row with the maximum subtracted.
template <typename T>
std::vector<T> softmax_row(std::span<const T> logits, T& log_denominator) {
  T max_logit = logits[0];
  for (T v : logits) max_logit = std::max(max_logit, v);
  std::vector<T> p(logits.size());
  T denom = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - max_logit);
    denom += p[i];
  }
  for (T& v : p) v /= denom;
  log_denominator = max_logit + std::log(denom);
  return p;
}

void check_target(const SftExample& example, std::size_t rows) {
  if (example.target.empty()) {
    throw ContractViolation("sft_loss: example has no target tokens");
  }
  if (example.first_target() == 0) {
    throw ContractViolation("sft_loss: target has no preceding position");
  }
  const std::size_t n = example.first_target() + example.target.size();
  if (rows < n) {
    throw ContractViolation("sft_loss: logits cover " + std::to_string(rows) +
                            " positions, sequence has " + std::to_string(n));
  }
}

}  // namespace

template <typename T>
Matrix<T> sequence_logits(const Weights<T>& weights,
                          const AdapterParams<T>& params, AdapterMode mode,
                          const SftExample& example) {
  return run_forward(weights, params, mode, example, {}).logits;
}

template <typename T>
SequenceKv<T> sequence_kv(const Weights<T>& weights,
                          const AdapterParams<T>& params, AdapterMode mode,
                          const SftExample& example) {
  Tape<T> tape = run_forward(weights, params, mode, example, {});
  SequenceKv<T> out;
  for (auto& layer : tape.layers) {
    out.keys.push_back(std::move(layer.k));
    out.values.push_back(std::move(layer.v));
  }
  return out;
}

template <typename T>
T sft_loss(const Matrix<T>& logits, const SftExample& example) {
  check_target(example, logits.rows());
  const std::size_t first = example.first_target();
  T total = T(0);
  for (std::size_t t = 0; t < example.target.size(); ++t) {
    const std::size_t row = first + t - 1;
    const TokenId token = example.target[t];
    if (token >= logits.cols()) {
      throw ContractViolation("target token outside vocabulary");
    }
    T log_denom;
    softmax_row<T>(logits.row(row), log_denom);
    total += log_denom - logits(row, token);
  }
  return total / static_cast<T>(example.target.size());
}

// ---------------------------------------------------------------------------
// Reverse pass

template <typename T>
LossAndGradient<T> backward_adapter(const SftExample& example,
                                    const AdapterParams<T>& params,
                                    AdapterMode mode, const Weights<T>& weights,
                                    const DropoutSettings& dropout) {
  const auto& c = weights.config;
  const Tape<T> tape = run_forward(weights, params, mode, example, dropout);
  const std::size_t n = tape.length;
  const std::size_t d = c.d_model;
  const std::size_t b = tape.adapted_from;
  const std::size_t dh = c.d_head;
  check_target(example, n);

  LossAndGradient<T> out;
  out.gradient = params.zeros_like();
  out.loss = sft_loss(tape.logits, example);

  // Gradient of the loss with respect to the final residual rows.
  Matrix<T> grad(n, d);
  const std::size_t first = example.first_target();
  const T inv_count = T(1) / static_cast<T>(example.target.size());
  std::vector<T> dnormed(d);
  for (std::size_t t = 0; t < example.target.size(); ++t) {
    const std::size_t row = first + t - 1;
    if (row < b) continue;  // no adapter parameter reaches this row
    T log_denom;
    std::vector<T> dlogits = softmax_row<T>(tape.logits.row(row), log_denom);
    dlogits[example.target[t]] -= T(1);
    for (T& v : dlogits) v *= inv_count;
    std::fill(dnormed.begin(), dnormed.end(), T(0));
    kernels::matvec_transposed_add<T>(dlogits, weights.unembedding, dnormed);
    kernels::rms_norm_backward<T>(tape.final_input.row(row), weights.final_norm,
                                  tape.inv_final[row], dnormed, grad.row(row));
  }

  const T attn_scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> dact(c.mlp_width()), dmlp(d), dprob, da(d), dlow, tmp(d);
  for (std::size_t l = c.n_layers; l-- > 0;) {
    const auto& lw = weights.layers[l];
    const auto& lt = tape.layers[l];

    // MLP block: grad holds d(output); after this it holds d(mid).
    for (std::size_t i = b; i < n; ++i) {
      auto g = grad.row(i);
      std::fill(dact.begin(), dact.end(), T(0));
      kernels::matvec_transposed_add<T>(g, lw.w_down, dact);
      const auto up = lt.up.row(i);
      for (std::size_t j = 0; j < dact.size(); ++j) {
        dact[j] *= kernels::gelu_grad(up[j]);
      }
      std::fill(dmlp.begin(), dmlp.end(), T(0));
      kernels::matvec_transposed_add<T>(dact, lw.w_up, dmlp);
      kernels::rms_norm_backward<T>(lt.mid.row(i), lw.mlp_norm, lt.inv_mlp[i],
                                    dmlp, g);
    }

    // Attention block.
    Matrix<T> dheads(n, d), dq(n, d), dk(n, d), dv(n, d);
    for (std::size_t i = b; i < n; ++i) {
      kernels::matvec_transposed_add<T>(grad.row(i), lw.wo, dheads.row(i));
    }
    for (std::size_t i = b; i < n; ++i) {
      const std::size_t keys = i + 1;
      dprob.resize(keys);
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const T* p = lt.probs[i].data() + h * keys;
        const T* dout = dheads.data() + i * d + h * dh;
        T weighted = T(0);
        for (std::size_t j = 0; j < keys; ++j) {
          dprob[j] = kernels::dot(dout, lt.v.data() + j * d + h * dh, dh);
          weighted += p[j] * dprob[j];
        }
        const T* qh = lt.q.data() + i * d + h * dh;
        T* dqh = dq.data() + i * d + h * dh;
        for (std::size_t j = 0; j < keys; ++j) {
          const T ds = p[j] * (dprob[j] - weighted) * attn_scale;
          const T* kh = lt.k.data() + j * d + h * dh;
          for (std::size_t e = 0; e < dh; ++e) dqh[e] += ds * kh[e];
          if (j < b) continue;
          T* dkh = dk.data() + j * d + h * dh;
          T* dvh = dv.data() + j * d + h * dh;
          for (std::size_t e = 0; e < dh; ++e) {
            dkh[e] += ds * qh[e];
            dvh[e] += p[j] * dout[e];
          }
        }
      }
    }

    // Projections, then the attention norm into the residual.
    Matrix<T>* dproj[3] = {&dq, &dk, &dv};
    for (std::size_t i = b; i < n; ++i) {
      unrotate_heads<T>(dq.row(i), i, c);
      unrotate_heads<T>(dk.row(i), i, c);
      std::fill(da.begin(), da.end(), T(0));
      const auto xi = lt.normed.row(i);
      for (std::size_t j = 0; j < 3; ++j) {
        const auto dy = dproj[j]->row(i);
        kernels::matvec_transposed_add<T>(dy, lw.projection(j), da);
        const auto& slot = params.layers[l][j];
        if (!slot) continue;
        auto& gslot = *out.gradient.layers[l][j];
        for (std::size_t e = 0; e < d; ++e) tmp[e] = params.scale * dy[e];
        kernels::outer_add<T>(lt.low[j].row(i), tmp, gslot.b);
        dlow.assign(slot->a.cols(), T(0));
        kernels::matvec_transposed_add<T>(tmp, slot->b, dlow);
        if (!lt.keep[j].empty()) {
          const auto keep = lt.keep[j].row(i);
          for (std::size_t r = 0; r < dlow.size(); ++r) dlow[r] *= keep[r];
        }
        kernels::outer_add<T>(xi, dlow, gslot.a);
        kernels::matvec_transposed_add<T>(dlow, slot->a, da);
      }
      kernels::rms_norm_backward<T>(lt.input.row(i), lw.attn_norm,
                                    lt.inv_attn[i], da, grad.row(i));
    }
  }
  return out;
}

template <typename T>
LossAndGradient<T> backward_batch(const std::vector<const SftExample*>& batch,
                                  const AdapterParams<T>& params,
                                  AdapterMode mode, const Weights<T>& weights,
                                  const DropoutSettings& dropout) {
  if (batch.empty()) throw ContractViolation("backward_batch: empty batch");
  LossAndGradient<T> total;
  total.gradient = params.zeros_like();
  for (const SftExample* example : batch) {
    LossAndGradient<T> one =
        backward_adapter(*example, params, mode, weights, dropout);
    total.loss += one.loss;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      for (std::size_t j = 0; j < 3; ++j) {
        auto& dst = total.gradient.layers[l][j];
        const auto& src = one.gradient.layers[l][j];
        if (!dst) continue;
        for (std::size_t k = 0; k < dst->a.size(); ++k) {
          dst->a.data()[k] += src->a.data()[k];
        }
        for (std::size_t k = 0; k < dst->b.size(); ++k) {
          dst->b.data()[k] += src->b.data()[k];
        }
      }
    }
  }
  return total;
}

template struct AdapterParams<float>;
template struct AdapterParams<double>;
template Matrix<float> sequence_logits(const Weights<float>&,
                                       const AdapterParams<float>&, AdapterMode,
                                       const SftExample&);
template Matrix<double> sequence_logits(const Weights<double>&,
                                        const AdapterParams<double>&,
                                        AdapterMode, const SftExample&);
template SequenceKv<float> sequence_kv(const Weights<float>&,
                                      const AdapterParams<float>&, AdapterMode,
                                      const SftExample&);
template SequenceKv<double> sequence_kv(const Weights<double>&,
                                       const AdapterParams<double>&,
                                       AdapterMode, const SftExample&);
template float sft_loss(const Matrix<float>&, const SftExample&);
template double sft_loss(const Matrix<double>&, const SftExample&);
template LossAndGradient<float> backward_adapter(const SftExample&,
                                                 const AdapterParams<float>&,
                                                 AdapterMode,
                                                 const Weights<float>&,
                                                 const DropoutSettings&);
template LossAndGradient<double> backward_adapter(const SftExample&,
                                                  const AdapterParams<double>&,
                                                  AdapterMode,
                                                  const Weights<double>&,
                                                  const DropoutSettings&);
template LossAndGradient<float> backward_batch(
    const std::vector<const SftExample*>&, const AdapterParams<float>&,
    AdapterMode, const Weights<float>&, const DropoutSettings&);
template LossAndGradient<double> backward_batch(
    const std::vector<const SftExample*>&, const AdapterParams<double>&,
    AdapterMode, const Weights<double>&, const DropoutSettings&);

// ---------------------------------------------------------------------------
// Training loop

void validate_example(const SftExample& example, const AdapterSpec& spec) {
  if (example.target.empty()) {
    throw ConfigError("training example has no target tokens");
  }
  if (example.invocation.empty()) {
    throw ConfigError("training example has no invocation tokens");
  }
  if (spec.mode == AdapterMode::kLora) return;
  std::vector<TokenId> prompt = example.context;
  prompt.insert(prompt.end(), example.invocation.begin(),
                example.invocation.end());
  const auto found = find_last_occurrence(prompt, spec.invocation_sequence);
  if (!found || *found != example.context.size()) {
    throw ConfigError(
        "invocation sequence must start right after the context and occur "
        "there last");
  }
}

AdapterSpec init_adapter(const ModelConfig& config, const TrainConfig& train,
                         AdapterId id, AdapterMode mode,
                         std::vector<TokenId> invocation_sequence) {
  RandomAdapterOptions options;
  options.id = id;
  options.mode = mode;
  options.rank = train.rank;
  options.alpha = static_cast<float>(train.alpha);
  options.invocation_sequence = std::move(invocation_sequence);
  options.a_std = 0.02;
  options.b_std = 0.0;
  return random_adapter(config, options, train.seed ^ 0x9e3779b97f4a7c15ULL);
}

namespace {

template <typename T>
TrainResult train_impl(const std::vector<SftExample>& dataset,
                       const AdapterSpec& initial, const ModelWeights& weights,
                       const TrainConfig& config,
                       const std::vector<SftExample>& eval_set) {
  const Weights<T> w = weights.template cast<T>();
  AdapterParams<T> params = AdapterParams<T>::from_spec(initial);
  AdapterParams<T> m = params.zeros_like();
  AdapterParams<T> v = params.zeros_like();
  Rng order_rng(config.seed);
  Rng dropout_rng(config.seed ^ 0xd1b54a32d192ed03ULL);
  const DropoutSettings dropout{config.dropout_rate, &dropout_rng};

  TrainResult result;
  result.adapter = initial;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  const auto shuffle = [&] {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[order_rng.below(i)]);
    }
    cursor = 0;
  };

  const T lr = static_cast<T>(config.learning_rate);
  const T beta1 = static_cast<T>(config.beta1);
  const T beta2 = static_cast<T>(config.beta2);
  const T eps = static_cast<T>(config.adam_epsilon);
  std::vector<const SftExample*> batch;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    batch.clear();
    for (std::size_t i = 0; i < config.batch_size; ++i) {
      if (cursor == order.size()) shuffle();
      batch.push_back(&dataset[order[cursor++]]);
    }
    LossAndGradient<T> lg =
        backward_batch(batch, params, initial.mode, w, dropout);
    const double loss = static_cast<double>(lg.loss) /
                        static_cast<double>(batch.size());
    if (!std::isfinite(loss)) {
      throw DivergenceError("loss became non-finite", step);
    }

    const T inv_batch = T(1) / static_cast<T>(batch.size());
    const T correction1 =
        T(1) - static_cast<T>(std::pow(config.beta1, static_cast<double>(step)));
    const T correction2 =
        T(1) - static_cast<T>(std::pow(config.beta2, static_cast<double>(step)));
    std::vector<Matrix<T>*> p_list, g_list, m_list, v_list;
    params.for_each_tensor([&](Matrix<T>& x) { p_list.push_back(&x); });
    lg.gradient.for_each_tensor([&](Matrix<T>& x) { g_list.push_back(&x); });
    m.for_each_tensor([&](Matrix<T>& x) { m_list.push_back(&x); });
    v.for_each_tensor([&](Matrix<T>& x) { v_list.push_back(&x); });
    for (std::size_t t = 0; t < p_list.size(); ++t) {
      T* p = p_list[t]->data();
      const T* g = g_list[t]->data();
      T* mt = m_list[t]->data();
      T* vt = v_list[t]->data();
      for (std::size_t k = 0; k < p_list[t]->size(); ++k) {
        const T gk = g[k] * inv_batch;
        mt[k] = beta1 * mt[k] + (T(1) - beta1) * gk;
        vt[k] = beta2 * vt[k] + (T(1) - beta2) * gk * gk;
        const T mhat = mt[k] / correction1;
        const T vhat = vt[k] / correction2;
        p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }

    MetricsRow row{step, loss, std::nullopt};
    const bool eval_now =
        step == config.steps ||
        (config.eval_every > 0 && step % config.eval_every == 0);
    if (eval_now && !eval_set.empty()) {
      params.write_to(result.adapter);
      row.eval_exact_match = exact_match(eval_set, result.adapter, weights);
    }
    result.history.push_back(row);
  }
  if (config.steps > 0) params.write_to(result.adapter);
  return result;
}

}  // namespace

TrainResult train(const std::vector<SftExample>& dataset,
                  const AdapterSpec& initial, const ModelWeights& weights,
                  const TrainConfig& config,
                  const std::vector<SftExample>* eval_set) {
  validate_weights(weights);
  initial.validate(weights.config);
  if (config.steps > 0 && dataset.empty()) {
    throw ConfigError("training needs at least one example");
  }
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
    throw ConfigError("learning rate must be positive and finite");
  }
  if (config.dropout_rate < 0.0 || config.dropout_rate >= 1.0) {
    throw ConfigError("dropout rate must be in [0, 1)");
  }
  for (const auto& example : dataset) validate_example(example, initial);
  const std::vector<SftExample>& evaluation =
      eval_set != nullptr ? *eval_set : dataset;
  if (config.precision == Precision::kF64) {
    return train_impl<double>(dataset, initial, weights, config, evaluation);
  }
  return train_impl<float>(dataset, initial, weights, config, evaluation);
}

double exact_match(const std::vector<SftExample>& examples,
                   const AdapterSpec& adapter, const ModelWeights& weights) {
  if (examples.empty()) return 0.0;
  const auto params = AdapterParams<float>::from_spec(adapter);
  std::size_t hits = 0;
  for (const auto& example : examples) {
    const Matrix<float> logits =
        sequence_logits(weights, params, adapter.mode, example);
    bool all = true;
    for (std::size_t t = 0; t < example.target.size() && all; ++t) {
      const std::size_t row = example.first_target() + t - 1;
      all = greedy_pick(logits.row(row), kEosToken) == example.target[t];
    }
    if (all) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::vector<TokenId> token_array(const nlohmann::json& j, const char* key,
                                 std::size_t line) {
  if (!j.contains(key) || !j[key].is_array()) {
    throw ConfigError("dataset line " + std::to_string(line) +
                      ": missing array '" + key + "'");
  }
  std::vector<TokenId> out;
  for (const auto& v : j[key]) {
    if (!v.is_number_unsigned()) {
      throw ConfigError("dataset line " + std::to_string(line) + ": '" + key +
                        "' holds a non-token value");
    }
    out.push_back(v.get<TokenId>());
  }
  return out;
}

}  // namespace

std::vector<SftExample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<SftExample> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("dataset line " + std::to_string(line) + ": " +
                        e.what());
    }
    out.push_back({token_array(j, "context", line),
                   token_array(j, "invocation", line),
                   token_array(j, "target", line)});
  }
  return out;
}

void write_dataset(const std::vector<SftExample>& examples,
                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset " + path.string());
  for (const auto& e : examples) {
    nlohmann::json j{{"context", e.context},
                     {"invocation", e.invocation},
                     {"target", e.target}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing dataset " + path.string());
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "step,loss,eval_exact_match\n";
  for (const auto& r : rows) {
    std::ostringstream line;
    line.precision(9);
    line << r.step << ',' << r.loss << ',';
    if (r.eval_exact_match) line << *r.eval_exact_match;
    out << line.str() << '\n';
  }
}

}  // namespace alora
