// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/forward.hpp"

#include <cmath>
#include <string>

#include "alora/error.hpp"

namespace alora {
namespace {

void note(CostLedger* ledger, const CostEvent& event) {
  if (ledger != nullptr) record(*ledger, event);
}

void rotate_heads(std::span<float> row, std::size_t position,
                  const ModelConfig& c) {
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    kernels::rope<float>(row.subspan(h * c.d_head, c.d_head),
                         static_cast<double>(position), c.rope_theta);
  }
}

}  // namespace

ProjectionTriple project_segment(const HiddenRows& x, std::size_t layer,
                                 const ModelWeights& weights,
                                 const ProjectionPolicy& policy,
                                 CostLedger* ledger) {
  const auto& c = weights.config;
  const std::size_t d = c.d_model;
  if (x.rows.cols() != d) {
    throw ConfigError("hidden rows are " + std::to_string(x.rows.cols()) +
                      " wide, model expects " + std::to_string(d));
  }
  if (layer >= weights.layers.size()) {
    throw ConfigError("layer " + std::to_string(layer) + " out of range");
  }
  if (!x.rows.all_finite()) {
    throw ContractViolation("project_segment: non-finite hidden rows");
  }
  const auto& lw = weights.layers[layer];
  const std::size_t n = x.rows.rows();
  ProjectionTriple out{Matrix<float>(n, d), Matrix<float>(n, d),
                       Matrix<float>(n, d)};
  Matrix<float>* targets[3] = {&out.q, &out.k, &out.v};
  std::vector<float> low;
  std::vector<float> scratch(d);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t position = x.start_position + i;
    const auto xi = x.rows.row(i);
    for (Projection p : kAllProjections) {
      const std::size_t j = static_cast<std::size_t>(p);
      auto y = targets[j]->row(i);
      kernels::matvec<float>(xi, lw.projection(j), y);
      const LowRankDelta* delta = policy.delta(layer, p, position);
      if (delta == nullptr) continue;
      if (delta->a.rows() != d || delta->b.cols() != d ||
          delta->a.cols() != delta->b.rows()) {
        throw ConfigError("adapter delta does not match d_model");
      }
      low.resize(delta->rank());
      kernels::matvec<float>(xi, delta->a, low);
      kernels::add_low_rank<float>(low, delta->b, delta->scale(), y, scratch);
      note(ledger, cost_events::Matmul{1, d, delta->rank()});
      note(ledger, cost_events::Matmul{1, delta->rank(), d});
    }
  }
  note(ledger, cost_events::Matmul{n, d, d});
  note(ledger, cost_events::Matmul{n, d, d});
  note(ledger, cost_events::Matmul{n, d, d});
  return out;
}

std::vector<float> rope_rotate(std::span<const float> vec,
                               std::size_t position,
                               const ModelConfig& config) {
  if (config.d_head % 2 != 0) {
    throw ConfigError("rotary embedding needs an even head size");
  }
  if (vec.size() != config.d_head) {
    throw ConfigError("rope_rotate expects a d_head-sized vector");
  }
  std::vector<float> out(vec.begin(), vec.end());
  kernels::rope<float>(out, static_cast<double>(position), config.rope_theta);
  return out;
}

HiddenRows attend(const Matrix<float>& rotated_queries,
                  std::size_t start_position,
                  std::span<const kernels::KvChunk<float>> keys_values,
                  std::size_t n_keys, std::size_t layer,
                  const ModelWeights& weights, CostLedger* ledger) {
  const auto& c = weights.config;
  const std::size_t n = rotated_queries.rows();
  std::size_t covered = 0;
  for (const auto& chunk : keys_values) covered += chunk.rows;
  covered = std::min(covered, n_keys);
  if (start_position + n > covered) {
    throw ContractViolation(
        "query position " + std::to_string(start_position + n - 1) +
        " exceeds key coverage of " + std::to_string(covered) + " positions");
  }
  HiddenRows out{Matrix<float>(n, c.d_model), start_position};
  std::vector<float> heads(c.d_model);
  std::vector<float> scores;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t keys = start_position + i + 1;
    kernels::attend_row<float>(rotated_queries.row(i), keys_values, keys,
                               c.n_heads, c.d_head, heads, scores);
    kernels::matvec<float>(heads, weights.layers[layer].wo, out.rows.row(i));
    note(ledger, cost_events::AttentionQuery{keys, c.n_heads, c.d_head});
  }
  note(ledger, cost_events::Matmul{n, c.d_model, c.d_model});
  return out;
}

std::vector<float> forward_segment(std::span<const TokenId> tokens,
                                   std::size_t start_position,
                                   const ModelWeights& weights,
                                   const ProjectionPolicy& policy,
                                   KvCache& cache, CostLedger* ledger,
                                   ForwardTrace* trace) {
  const auto& c = weights.config;
  const std::size_t d = c.d_model;
  const std::size_t n = tokens.size();
  if (n == 0) throw ContractViolation("forward_segment: empty segment");
  if (cache.n_layers() != c.n_layers || cache.d_model() != d) {
    throw ConfigError("cache geometry does not match the model");
  }
  cache.check_integrity();
  if (cache.length() != start_position) {
    throw ContractViolation("cache holds " + std::to_string(cache.length()) +
                            " positions but segment starts at " +
                            std::to_string(start_position));
  }
  if (start_position + n > c.max_positions) {
    throw ConfigError("sequence of " + std::to_string(start_position + n) +
                      " positions exceeds max_positions " +
                      std::to_string(c.max_positions));
  }

  Matrix<float> hidden(n, d);
  std::vector<PositionTag> tags(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] >= c.vocab_size) {
      throw ContractViolation("token id " + std::to_string(tokens[i]) +
                              " outside vocabulary");
    }
    const auto emb = weights.token_embedding.row(tokens[i]);
    std::copy(emb.begin(), emb.end(), hidden.row(i).begin());
    tags[i] = {tokens[i], policy.provenance(start_position + i)};
  }
  note(ledger, cost_events::FreshRows{n});
  if (trace != nullptr) trace->layer_outputs.clear();

  HiddenRows normed{Matrix<float>(n, d), start_position};
  std::vector<float> mlp_in(d), up(c.mlp_width()), down(d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lw = weights.layers[l];
    for (std::size_t i = 0; i < n; ++i) {
      kernels::rms_norm<float>(hidden.row(i), lw.attn_norm, normed.rows.row(i));
    }
    ProjectionTriple proj = project_segment(normed, l, weights, policy, ledger);
    for (std::size_t i = 0; i < n; ++i) {
      rotate_heads(proj.q.row(i), start_position + i, c);
      rotate_heads(proj.k.row(i), start_position + i, c);
    }
    cache.append_rows(l, start_position, proj.k, proj.v,
                      l == 0 ? std::span<const PositionTag>(tags)
                             : std::span<const PositionTag>());
    const auto kv = cache.chunks(l);
    const HiddenRows attn =
        attend(proj.q, start_position, kv, start_position + n, l, weights,
               ledger);

    for (std::size_t i = 0; i < n; ++i) {
      auto h = hidden.row(i);
      const auto a = attn.rows.row(i);
      for (std::size_t j = 0; j < d; ++j) h[j] += a[j];
      kernels::rms_norm<float>(h, lw.mlp_norm, mlp_in);
      kernels::matvec<float>(mlp_in, lw.w_up, up);
      for (auto& u : up) u = kernels::gelu(u);
      kernels::matvec<float>(up, lw.w_down, down);
      for (std::size_t j = 0; j < d; ++j) h[j] += down[j];
    }
    note(ledger, cost_events::Matmul{n, d, c.mlp_width()});
    note(ledger, cost_events::Matmul{n, c.mlp_width(), d});
    if (trace != nullptr) trace->layer_outputs.push_back(hidden);
  }

  std::vector<float> final_row(d), logits(c.vocab_size);
  kernels::rms_norm<float>(hidden.row(n - 1), weights.final_norm, final_row);
  kernels::matvec<float>(final_row, weights.unembedding, logits);
  note(ledger, cost_events::Matmul{1, d, c.vocab_size});
  return logits;
}

namespace {

TokenId pick(std::span<const float> logits, std::optional<TokenId> skip) {
  if (logits.empty()) throw ContractViolation("greedy_pick: empty logits");
  std::optional<TokenId> best;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (std::isnan(logits[i])) {
      throw ContractViolation("greedy_pick: NaN logit at index " +
                              std::to_string(i));
    }
    if (skip && i == *skip) continue;
    if (!best || logits[i] > logits[*best]) best = static_cast<TokenId>(i);
  }
  if (!best) throw ContractViolation("greedy_pick: no selectable token");
  return *best;
}

}  // namespace

TokenId greedy_pick(std::span<const float> logits) {
  return pick(logits, std::nullopt);
}

TokenId greedy_pick(std::span<const float> logits, TokenId suppressed) {
  return pick(logits, suppressed);
}

}  // namespace alora
