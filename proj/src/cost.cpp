// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/cost.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <tuple>

#include "alora/error.hpp"

namespace alora {
namespace {

constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();

void add(CostLedger& ledger, std::uint64_t& counter, std::uint64_t amount) {
  if (counter > kMax - amount) {
    counter = kMax;
    ledger.overflowed = true;
  } else {
    counter += amount;
  }
}

std::uint64_t mul(CostLedger& ledger, std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > kMax / a) {
    ledger.overflowed = true;
    return kMax;
  }
  return a * b;
}

// Sum of (p + 1) for p in [first, last].
std::uint64_t key_count_sum(std::uint64_t first, std::uint64_t last) {
  const std::uint64_t hi = (last + 1) * (last + 2) / 2;
  const std::uint64_t lo = first * (first + 1) / 2;
  return hi - lo;
}

}  // namespace

std::uint64_t CostLedger::total_flops() const {
  const std::uint64_t sum = matmul_flops + attention_score_flops;
  return sum + softmax_ops;
}

CostLedger& CostLedger::merge(const CostLedger& o) {
  add(*this, matmul_flops, o.matmul_flops);
  add(*this, attention_score_flops, o.attention_score_flops);
  add(*this, softmax_ops, o.softmax_ops);
  add(*this, rows_projected_fresh, o.rows_projected_fresh);
  add(*this, rows_reused, o.rows_reused);
  add(*this, cache_bytes_incremental, o.cache_bytes_incremental);
  add(*this, wall_ns, o.wall_ns);
  overflowed = overflowed || o.overflowed;
  return *this;
}

bool CostLedger::counters_equal(const CostLedger& o) const {
  return std::tie(matmul_flops, attention_score_flops, softmax_ops,
                  rows_projected_fresh, rows_reused, cache_bytes_incremental,
                  overflowed) ==
         std::tie(o.matmul_flops, o.attention_score_flops, o.softmax_ops,
                  o.rows_projected_fresh, o.rows_reused,
                  o.cache_bytes_incremental, o.overflowed);
}

void record(CostLedger& ledger, const CostEvent& event) {
  using namespace cost_events;
  if (const auto* m = std::get_if<Matmul>(&event)) {
    add(ledger, ledger.matmul_flops,
        mul(ledger, mul(ledger, 2 * m->m, m->k), m->n));
  } else if (const auto* a = std::get_if<AttentionQuery>(&event)) {
    const std::uint64_t products =
        mul(ledger, mul(ledger, 2 * a->n_keys, a->d_head), a->n_heads);
    add(ledger, ledger.attention_score_flops, products);
    add(ledger, ledger.matmul_flops, products);
    add(ledger, ledger.softmax_ops, mul(ledger, a->n_keys, a->n_heads));
  } else if (const auto* f = std::get_if<FreshRows>(&event)) {
    add(ledger, ledger.rows_projected_fresh, f->rows);
  } else if (const auto* r = std::get_if<ReusedRows>(&event)) {
    add(ledger, ledger.rows_reused, r->rows);
  }
}

bool CostPrediction::matches(const CostLedger& measured) const {
  return matmul_flops == measured.matmul_flops &&
         attention_score_flops == measured.attention_score_flops &&
         softmax_ops == measured.softmax_ops &&
         rows_projected_fresh == measured.rows_projected_fresh &&
         cache_bytes == measured.cache_bytes_incremental;
}

CostPrediction predict_first_token(const CostQuery& q) {
  const auto& c = q.config;
  const std::uint64_t d = c.d_model;
  const std::uint64_t layers = c.n_layers;
  const std::uint64_t vocab = c.vocab_size;
  const std::uint64_t row_bytes = c.kv_row_bytes();

  // Fresh rows occupy positions [first, last]; the final one is the first
  // generated token.
  const std::uint64_t last = q.t_cache + q.t_new;
  const std::uint64_t first = q.mode == AdapterMode::kAlora ? q.t_cache : 0;
  const std::uint64_t fresh = last - first + 1;
  const std::uint64_t adapted =
      q.mode == AdapterMode::kLora
          ? fresh
          : (q.t_new > q.invocation_offset ? q.t_new - q.invocation_offset
                                           : 0);
  const std::uint64_t keys = key_count_sum(first, last);

  // Q, K, V, O projections plus the two MLP products, per fresh row.
  const std::uint64_t dense_per_row = 2 * d * d * 4 + 2 * d * (4 * d) * 2;
  // x·A then (x·A)·B for each adapted projection.
  const std::uint64_t delta_per_row = 4 * d * q.rank * q.adapted_projections;
  // Unembedding runs once for the prefill segment and once for the first
  // generated token.
  const std::uint64_t unembed = 2 * 2 * d * vocab;

  CostPrediction one;
  one.attention_score_flops = layers * keys * 2 * d;
  one.matmul_flops = layers * (fresh * dense_per_row + adapted * delta_per_row +
                               keys * 2 * d) +
                     unembed;
  one.softmax_ops = layers * keys * c.n_heads;
  one.rows_projected_fresh = fresh;
  one.cache_bytes = q.mode == AdapterMode::kAlora
                        ? q.t_new * row_bytes
                        : (q.t_cache + q.t_new) * row_bytes;

  const std::uint64_t n = q.n_adapters;
  CostPrediction out;
  out.matmul_flops = n * one.matmul_flops;
  out.attention_score_flops = n * one.attention_score_flops;
  out.softmax_ops = n * one.softmax_ops;
  out.rows_projected_fresh = n * one.rows_projected_fresh;
  out.cache_bytes = n * one.cache_bytes;
  return out;
}

SpeedupReport speedup_report(const std::vector<CostMeasurement>& measurements) {
  SpeedupReport report;
  using Key = std::tuple<std::size_t, std::size_t, std::size_t>;  // N, T_new, T_cache
  std::map<Key, const CostMeasurement*> lora, alora;
  for (const auto& m : measurements) {
    if (m.query.t_new == 0) {
      report.diagnostics.push_back(
          "dropped zero-length adapter workload at T_cache=" +
          std::to_string(m.query.t_cache));
      continue;
    }
    const Key key{m.query.n_adapters, m.query.t_new, m.query.t_cache};
    auto& side = m.query.mode == AdapterMode::kLora ? lora : alora;
    side[key] = &m;
  }
  for (const auto& [key, l] : lora) {
    if (!alora.contains(key)) {
      throw ContractViolation("LoRA measurement at T_cache=" +
                              std::to_string(std::get<2>(key)) +
                              " has no aLoRA pair");
    }
  }
  for (const auto& [key, a] : alora) {
    auto it = lora.find(key);
    if (it == lora.end()) {
      throw ContractViolation("aLoRA measurement at T_cache=" +
                              std::to_string(std::get<2>(key)) +
                              " has no LoRA pair");
    }
    const auto* l = it->second;
    SpeedupRow row;
    std::tie(row.n_adapters, row.t_new, row.t_cache) = key;
    row.measured_ratio = static_cast<double>(l->first_token.total_flops()) /
                         static_cast<double>(a->first_token.total_flops());
    row.predicted_ratio =
        static_cast<double>(predict_first_token(l->query).total_flops()) /
        static_cast<double>(predict_first_token(a->query).total_flops());
    row.relative_deviation =
        std::abs(row.measured_ratio - row.predicted_ratio) /
        row.predicted_ratio;
    report.rows.push_back(row);
  }
  return report;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << kBenchCsvHeader << '\n';
  for (const auto& r : rows) {
    out << mode_name(r.mode) << ',' << r.seed << ',' << r.t_cache << ','
        << r.t_new << ',' << r.n_adapters << ',' << r.first_token_flops << ','
        << r.total_flops << ',' << r.cache_bytes_incremental << ','
        << r.wall_ns << ',' << r.predicted_flops << ',' << r.predicted_bytes
        << '\n';
  }
}

}  // namespace alora
