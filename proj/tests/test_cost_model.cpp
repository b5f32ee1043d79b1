// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <limits>
#include <memory>
#include <sstream>
#include <vector>

#include "alora/cost.hpp"
#include "alora/engine.hpp"
#include "alora/error.hpp"
#include "alora/rng.hpp"
#include "oracles.hpp"

namespace {

using alora::AdapterMode;
using alora::AdapterSpec;
using alora::CostLedger;
using alora::CostMeasurement;
using alora::CostQuery;
using alora::DecodeSettings;
using alora::Engine;
using alora::TokenId;
namespace ev = alora::cost_events;

constexpr std::size_t kRank = 4;
const std::vector<TokenId> kInvocation = {3, 4};

alora::ModelConfig long_config() {
  auto c = oracle::tiny_config();
  c.max_positions = 2048;
  return c;
}

AdapterSpec make_adapter(AdapterMode mode) {
  alora::RandomAdapterOptions o;
  o.mode = mode;
  o.rank = kRank;
  if (mode == AdapterMode::kAlora) o.invocation_sequence = kInvocation;
  return alora::random_adapter(long_config(), o, 5);
}

std::vector<TokenId> filler(std::size_t n, alora::Rng& rng) {
  std::vector<TokenId> t(n);
  for (auto& v : t) v = static_cast<TokenId>(16 + rng.below(48));
  return t;
}

// First-token ledgers of one aLoRA and one LoRA invocation after a base
// prompt of t_cache tokens; the invocation opens the t_new fresh tokens.
struct Pair {
  CostMeasurement alora, lora;
};

Pair measure(const Engine& engine, std::size_t t_cache, std::size_t t_new,
             std::uint64_t seed) {
  alora::Rng rng(seed);
  alora::GenerationRequest base;
  base.prompt_tokens = filler(t_cache, rng);
  const auto pre = engine.prefill(base);
  std::vector<TokenId> extra = kInvocation;
  const auto tail = filler(t_new - kInvocation.size(), rng);
  extra.insert(extra.end(), tail.begin(), tail.end());

  const AdapterSpec al = make_adapter(AdapterMode::kAlora);
  const AdapterSpec lo = make_adapter(AdapterMode::kLora);
  const DecodeSettings one{1, 1, false};
  const auto a = engine.invoke_intrinsic(pre.cache, extra, al, one);
  auto full = base.prompt_tokens;
  full.insert(full.end(), extra.begin(), extra.end());
  const auto l = engine.lora_invoke(full, lo, one);

  CostQuery q;
  q.t_cache = t_cache;
  q.t_new = t_new;
  q.config = engine.config();
  q.rank = kRank;
  Pair out;
  out.alora = {q, a.first_token_cost};
  q.mode = AdapterMode::kLora;
  out.lora = {q, l.first_token_cost};
  return out;
}

TEST(Record, MatmulCountsTwoMnk) {
  CostLedger l;
  alora::record(l, ev::Matmul{2, 3, 4});
  EXPECT_EQ(l.matmul_flops, 48u);
  EXPECT_EQ(l.total_flops(), 48u);
}

TEST(Record, AttentionQueryCountsScoresValuesAndExponentials) {
  CostLedger l;
  alora::record(l, ev::AttentionQuery{5, 2, 8});
  EXPECT_EQ(l.attention_score_flops, 2u * 5 * 8 * 2);
  EXPECT_EQ(l.matmul_flops, 2u * 5 * 8 * 2);
  EXPECT_EQ(l.softmax_ops, 10u);
}

TEST(Record, RowCounters) {
  CostLedger l;
  alora::record(l, ev::FreshRows{7});
  alora::record(l, ev::ReusedRows{3});
  alora::record(l, ev::FreshRows{1});
  EXPECT_EQ(l.rows_projected_fresh, 8u);
  EXPECT_EQ(l.rows_reused, 3u);
}

TEST(Record, OverflowSaturatesAndFlags) {
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  CostLedger l;
  alora::record(l, ev::Matmul{1ull << 40, 1ull << 20, 1ull << 20});
  EXPECT_TRUE(l.overflowed);
  EXPECT_EQ(l.matmul_flops, kMax);

  CostLedger m;
  m.rows_reused = kMax - 1;
  alora::record(m, ev::ReusedRows{5});
  EXPECT_TRUE(m.overflowed);
  EXPECT_EQ(m.rows_reused, kMax);
}

TEST(Merge, FieldwiseSums) {
  CostLedger a{1, 2, 3, 4, 5, 6, 7, false};
  const CostLedger b{10, 20, 30, 40, 50, 60, 70, true};
  a.merge(b);
  EXPECT_EQ(a.matmul_flops, 11u);
  EXPECT_EQ(a.attention_score_flops, 22u);
  EXPECT_EQ(a.softmax_ops, 33u);
  EXPECT_EQ(a.rows_projected_fresh, 44u);
  EXPECT_EQ(a.rows_reused, 55u);
  EXPECT_EQ(a.cache_bytes_incremental, 66u);
  EXPECT_EQ(a.wall_ns, 77u);
  EXPECT_TRUE(a.overflowed);
}

TEST(Merge, CountersEqualIgnoresWallClock) {
  CostLedger a{1, 2, 3, 4, 5, 6, 7, false};
  CostLedger b = a;
  b.wall_ns = 999;
  EXPECT_TRUE(a.counters_equal(b));
  b.softmax_ops += 1;
  EXPECT_FALSE(a.counters_equal(b));
}

TEST(Prefill, MatchesHandDerivedCount) {
  const auto config = oracle::tiny_config();
  const Engine engine(std::make_shared<const alora::ModelWeights>(
      alora::random_model(config, 1)));
  alora::Rng rng(1);
  for (std::size_t t : {1u, 2u, 17u, 100u}) {
    alora::GenerationRequest r;
    r.prompt_tokens = filler(t, rng);
    CostLedger ledger;
    engine.prefill(r, &ledger);
    EXPECT_EQ(ledger.total_flops(), oracle::forward_flops(config, 0, t, 0, 0)) << t;

    // Matmul counter alone: projections, W_O, MLP, value sums, unembedding.
    const std::uint64_t d = config.d_model, L = config.n_layers;
    const std::uint64_t keys = t * (t + 1) / 2;
    const std::uint64_t matmul =
        L * (t * (4 * 2 * d * d + 2 * 2 * d * 4 * d) + keys * 2 * d) +
        2 * d * config.vocab_size;
    EXPECT_EQ(ledger.matmul_flops, matmul) << t;
    EXPECT_EQ(ledger.softmax_ops, L * keys * config.n_heads);
  }
}

TEST(Prefill, AdaptedRowsAddLowRankCost) {
  const auto config = oracle::tiny_config();
  const Engine engine(std::make_shared<const alora::ModelWeights>(
      alora::random_model(config, 2)));
  alora::RandomAdapterOptions o;
  o.rank = kRank;
  o.invocation_sequence = kInvocation;
  const auto spec = alora::random_adapter(config, o, 3);
  alora::Rng rng(2);
  auto tokens = filler(10, rng);
  tokens.insert(tokens.end(), kInvocation.begin(), kInvocation.end());
  tokens.push_back(20);
  alora::GenerationRequest r;
  r.prompt_tokens = tokens;
  r.adapter = &spec;
  CostLedger ledger;
  engine.prefill(r, &ledger);
  // Activation at 11, so positions 11 and 12 are adapted.
  EXPECT_EQ(ledger.total_flops(), oracle::forward_flops(config, 0, 13, 2, kRank));
}

TEST(Predict, MatchesMeasuredRunAtLongCache) {
  const Engine engine(std::make_shared<const alora::ModelWeights>(
      alora::random_model(long_config(), 4)));
  const Pair p = measure(engine, 1024, 16, 4);
  const auto pa = alora::predict_first_token(p.alora.query);
  const auto pl = alora::predict_first_token(p.lora.query);
  EXPECT_TRUE(pa.matches(p.alora.first_token));
  EXPECT_TRUE(pl.matches(p.lora.first_token));
  EXPECT_EQ(pa.total_flops(), p.alora.first_token.total_flops());
  EXPECT_EQ(pl.total_flops(), p.lora.first_token.total_flops());
  EXPECT_EQ(p.alora.first_token.rows_projected_fresh, 17u);
  EXPECT_EQ(p.lora.first_token.rows_projected_fresh, 1024u + 16 + 1);
  const std::size_t row = long_config().kv_row_bytes();
  EXPECT_EQ(pa.cache_bytes, 16u * row);
  EXPECT_EQ(pl.cache_bytes, (1024u + 16) * row);
}

TEST(Predict, MatchesIndependentCountOracle) {
  const auto config = long_config();
  for (std::size_t t_cache : {0u, 5u, 300u}) {
    for (std::size_t t_new : {1u, 4u, 16u}) {
      CostQuery q;
      q.t_cache = t_cache;
      q.t_new = t_new;
      q.config = config;
      q.rank = kRank;
      // aLoRA: prefill of t_new rows from t_cache, then one decode row. The
      // invocation opens the fresh tokens, so t_new of the t_new + 1 rows
      // are adapted.
      const std::uint64_t alora_expect =
          oracle::forward_flops(config, t_cache, t_new, t_new - 1, kRank) +
          oracle::forward_flops(config, t_cache + t_new, 1, 1, kRank);
      EXPECT_EQ(alora::predict_first_token(q).total_flops(), alora_expect);
      q.mode = AdapterMode::kLora;
      const std::uint64_t lora_expect =
          oracle::forward_flops(config, 0, t_cache + t_new, t_cache + t_new, kRank) +
          oracle::forward_flops(config, t_cache + t_new, 1, 1, kRank);
      EXPECT_EQ(alora::predict_first_token(q).total_flops(), lora_expect);
    }
  }
}

TEST(Predict, DoublingCacheQuadrupleVersusDouble) {
  CostQuery q;
  q.t_new = 16;
  q.config = alora::ModelConfig{};
  q.config.max_positions = 1 << 20;
  auto at = [&](std::size_t t_cache, AdapterMode mode) {
    q.t_cache = t_cache;
    q.mode = mode;
    return static_cast<double>(alora::predict_first_token(q).attention_score_flops);
  };
  const double lora = at(16384, AdapterMode::kLora) / at(8192, AdapterMode::kLora);
  const double al = at(16384, AdapterMode::kAlora) / at(8192, AdapterMode::kAlora);
  EXPECT_NEAR(lora, 4.0, 0.01);
  EXPECT_NEAR(al, 2.0, 0.01);
}

TEST(Predict, LinearInAdapterCount) {
  CostQuery q;
  q.t_cache = 700;
  q.t_new = 16;
  q.config = long_config();
  for (auto mode : {AdapterMode::kAlora, AdapterMode::kLora}) {
    q.mode = mode;
    q.n_adapters = 1;
    const auto one = alora::predict_first_token(q);
    q.n_adapters = 5;
    const auto five = alora::predict_first_token(q);
    EXPECT_EQ(five.matmul_flops, 5 * one.matmul_flops);
    EXPECT_EQ(five.attention_score_flops, 5 * one.attention_score_flops);
    EXPECT_EQ(five.softmax_ops, 5 * one.softmax_ops);
    EXPECT_EQ(five.cache_bytes, 5 * one.cache_bytes);
  }
}

TEST(Measured, FanoutFlopsLinearInN) {
  const auto weights = std::make_shared<const alora::ModelWeights>(
      alora::random_model(long_config(), 6));
  const Engine engine(weights);
  alora::Rng rng(6);
  alora::GenerationRequest base;
  base.prompt_tokens = filler(64, rng);
  const auto pre = engine.prefill(base);
  const AdapterSpec al = make_adapter(AdapterMode::kAlora);
  std::vector<AdapterSpec> specs(5, al);
  for (std::size_t i = 0; i < specs.size(); ++i) specs[i].id = static_cast<alora::AdapterId>(i + 1);
  std::vector<const AdapterSpec*> ptrs;
  for (const auto& s : specs) ptrs.push_back(&s);
  const std::vector<std::vector<TokenId>> extras(5, kInvocation);
  const DecodeSettings one{1, 1, false};
  const auto results = engine.fanout(pre.cache, ptrs, extras, one);
  CostLedger total;
  for (const auto& r : results) total.merge(r.first_token_cost);
  const auto single = engine.invoke_intrinsic(pre.cache, kInvocation, al, one);
  EXPECT_EQ(total.total_flops(), 5 * single.first_token_cost.total_flops());

  CostQuery q;
  q.t_cache = 64;
  q.t_new = kInvocation.size();
  q.n_adapters = 5;
  q.config = long_config();
  q.rank = kRank;
  EXPECT_TRUE(alora::predict_first_token(q).matches(total));
}

// Successive differences of samples at equally spaced T_cache.
std::vector<std::int64_t> diff(const std::vector<std::int64_t>& v) {
  std::vector<std::int64_t> out;
  for (std::size_t i = 1; i < v.size(); ++i) out.push_back(v[i] - v[i - 1]);
  return out;
}

TEST(Measured, QuadraticVersusLinearSeparation) {
  const Engine engine(std::make_shared<const alora::ModelWeights>(
      alora::random_model(long_config(), 7)));
  std::vector<std::int64_t> lora, al;
  for (std::size_t t_cache : {32u, 64u, 96u, 128u, 160u}) {
    const Pair p = measure(engine, t_cache, 8, 7);
    lora.push_back(static_cast<std::int64_t>(p.lora.first_token.total_flops()));
    al.push_back(static_cast<std::int64_t>(p.alora.first_token.total_flops()));
  }
  const auto l2 = diff(diff(lora));
  const auto l3 = diff(l2);
  EXPECT_GT(l2.front(), 0);
  for (auto v : l2) EXPECT_EQ(v, l2.front());
  for (auto v : l3) EXPECT_EQ(v, 0);
  const auto a1 = diff(al);
  EXPECT_GT(a1.front(), 0);
  for (auto v : diff(a1)) EXPECT_EQ(v, 0);
}

TEST(SpeedupReport, MonotoneExactAndFiltered) {
  const Engine engine(std::make_shared<const alora::ModelWeights>(
      alora::random_model(long_config(), 8)));
  std::vector<CostMeasurement> ms;
  for (std::size_t t_cache : {256u, 64u, 128u}) {
    const Pair p = measure(engine, t_cache, 4, 8);
    ms.push_back(p.alora);
    ms.push_back(p.lora);
  }
  CostMeasurement empty = ms.front();
  empty.query.t_new = 0;
  ms.push_back(empty);

  const auto report = alora::speedup_report(ms);
  ASSERT_EQ(report.rows.size(), 3u);
  ASSERT_EQ(report.diagnostics.size(), 1u);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    EXPECT_EQ(report.rows[i].relative_deviation, 0.0);
    EXPECT_EQ(report.rows[i].measured_ratio, report.rows[i].predicted_ratio);
    if (i > 0) {
      EXPECT_GT(report.rows[i].t_cache, report.rows[i - 1].t_cache);
      EXPECT_GT(report.rows[i].measured_ratio, report.rows[i - 1].measured_ratio);
    }
  }
}

TEST(SpeedupReport, UnpairedMeasurementIsError) {
  CostMeasurement m;
  m.query.t_cache = 10;
  m.query.t_new = 2;
  m.first_token.matmul_flops = 1;
  EXPECT_THROW(alora::speedup_report({m}), alora::ContractViolation);
  m.query.mode = AdapterMode::kLora;
  EXPECT_THROW(alora::speedup_report({m}), alora::ContractViolation);
}

TEST(BenchCsv, ExactHeaderAndRowLayout) {
  EXPECT_STREQ(alora::kBenchCsvHeader,
               "mode,seed,T_cache,T_new,N,first_token_flops,total_flops,"
               "cache_bytes_incremental,wall_ns,predicted_flops,predicted_bytes");
  alora::BenchRow row{AdapterMode::kLora, 3, 256, 16, 5, 100, 200, 300, 400, 100, 300};
  std::ostringstream out;
  alora::write_bench_csv(out, {row});
  EXPECT_EQ(out.str(), std::string(alora::kBenchCsvHeader) +
                           "\nlora,3,256,16,5,100,200,300,400,100,300\n");
}

}  // namespace
