// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "alora/adapter.hpp"
#include "alora/model.hpp"

namespace alora {

// Exact operation counts gathered at call sites. Flops follow the 2·m·n·k
// convention per m×k · k×n product.
//
//   matmul_flops           dense products: projections, low-rank deltas,
//                          W_O, MLP, unembedding, attention-weighted sums
//   attention_score_flops  query · key products
//   softmax_ops            exponentials evaluated in attention softmaxes
struct CostLedger {
  std::uint64_t matmul_flops = 0;
  std::uint64_t attention_score_flops = 0;
  std::uint64_t softmax_ops = 0;
  std::uint64_t rows_projected_fresh = 0;
  std::uint64_t rows_reused = 0;
  std::uint64_t cache_bytes_incremental = 0;
  std::uint64_t wall_ns = 0;
  bool overflowed = false;  // some counter saturated

  std::uint64_t total_flops() const;
  CostLedger& merge(const CostLedger& other);
  // Compares every counter except wall_ns.
  bool counters_equal(const CostLedger& other) const;
};

namespace cost_events {
struct Matmul {
  std::uint64_t m, k, n;
};
// One query row attending over n_keys keys in every head.
struct AttentionQuery {
  std::uint64_t n_keys, n_heads, d_head;
};
struct FreshRows {
  std::uint64_t rows;
};
struct ReusedRows {
  std::uint64_t rows;
};
}  // namespace cost_events

using CostEvent =
    std::variant<cost_events::Matmul, cost_events::AttentionQuery,
                 cost_events::FreshRows, cost_events::ReusedRows>;

// Adds the event's exact cost. Counters saturate at UINT64_MAX and set
// `overflowed`.
void record(CostLedger& ledger, const CostEvent& event);

// Workload for the first adapter-generated token. The measured window is the
// prefill of the fresh input rows plus the forward of the first generated
// token, so T_new + 1 rows are fresh for aLoRA and T_cache + T_new + 1 for
// LoRA.
struct CostQuery {
  std::size_t t_cache = 0;
  std::size_t t_new = 1;
  std::size_t n_adapters = 1;
  AdapterMode mode = AdapterMode::kAlora;
  ModelConfig config;
  std::size_t rank = 8;
  std::size_t adapted_projections = 3;
  // Offset of the invocation start inside the fresh tokens; for aLoRA the
  // rows up to and including it are projected with base weights.
  std::size_t invocation_offset = 0;
};

struct CostPrediction {
  std::uint64_t matmul_flops = 0;
  std::uint64_t attention_score_flops = 0;
  std::uint64_t softmax_ops = 0;
  std::uint64_t rows_projected_fresh = 0;
  std::uint64_t cache_bytes = 0;

  std::uint64_t total_flops() const {
    return matmul_flops + attention_score_flops + softmax_ops;
  }
  bool matches(const CostLedger& measured) const;
};

// Closed-form counts for `query`, summed over all N adapters.
CostPrediction predict_first_token(const CostQuery& query);

struct CostMeasurement {
  CostQuery query;
  CostLedger first_token;
};

struct SpeedupRow {
  std::size_t t_cache = 0;
  std::size_t t_new = 0;
  std::size_t n_adapters = 0;
  double measured_ratio = 0.0;   // LoRA / aLoRA first-token flops
  double predicted_ratio = 0.0;
  double relative_deviation = 0.0;
};

struct SpeedupReport {
  std::vector<SpeedupRow> rows;  // sorted by (N, T_new, T_cache)
  std::vector<std::string> diagnostics;
};

// Pairs LoRA and aLoRA measurements by (T_cache, T_new, N). Measurements
// with T_new = 0 are dropped with a diagnostic; anything left unpaired
// throws ContractViolation.
SpeedupReport speedup_report(const std::vector<CostMeasurement>& measurements);

inline constexpr const char* kBenchCsvHeader =
    "mode,seed,T_cache,T_new,N,first_token_flops,total_flops,"
    "cache_bytes_incremental,wall_ns,predicted_flops,predicted_bytes";

struct BenchRow {
  AdapterMode mode = AdapterMode::kAlora;
  std::uint64_t seed = 0;
  std::size_t t_cache = 0;
  std::size_t t_new = 0;
  std::size_t n_adapters = 0;
  std::uint64_t first_token_flops = 0;
  std::uint64_t total_flops = 0;
  std::uint64_t cache_bytes_incremental = 0;
  std::uint64_t wall_ns = 0;
  std::uint64_t predicted_flops = 0;
  std::uint64_t predicted_bytes = 0;
};

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace alora
