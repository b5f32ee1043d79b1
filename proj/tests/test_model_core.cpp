// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numbers>

#include <gtest/gtest.h>

#include "alora/checkpoint.hpp"
#include "alora/error.hpp"
#include "alora/forward.hpp"
#include "alora/kernels.hpp"
#include "alora/rng.hpp"
#include "oracles.hpp"

namespace alora {
namespace {

std::vector<TokenId> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> out(n);
  for (auto& t : out) t = static_cast<TokenId>(rng.below(vocab));
  return out;
}

ModelWeights two_by_two() {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 1;
  c.d_model = 2;
  c.d_head = 2;
  c.vocab_size = 4;
  c.max_positions = 16;
  ModelWeights w = random_model(c, 1);
  w.layers[0].wq = oracle::mat(2, 2, {1, 2, 3, 4});
  return w;
}

TEST(ModelConfig, DefaultsDescribeTheToyModel) {
  const ModelConfig c;
  EXPECT_EQ(c.n_layers, 4u);
  EXPECT_EQ(c.n_heads, 4u);
  EXPECT_EQ(c.d_model, 64u);
  EXPECT_EQ(c.vocab_size, 256u);
  EXPECT_EQ(c.rope_theta, 10000.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfig, RejectsInconsistentHeadSplit) {
  ModelConfig c;
  c.d_head = 8;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.n_layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.rope_theta = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelWeights, RandomModelIsSeededAndValid) {
  const ModelConfig c = oracle::tiny_config();
  const ModelWeights a = random_model(c, 7);
  const ModelWeights b = random_model(c, 7);
  const ModelWeights other = random_model(c, 8);
  EXPECT_NO_THROW(validate_weights(a));
  EXPECT_EQ(a.token_embedding, b.token_embedding);
  EXPECT_EQ(a.layers[1].w_down, b.layers[1].w_down);
  EXPECT_FALSE(a.token_embedding == other.token_embedding);
  for (float g : a.layers[0].attn_norm) EXPECT_EQ(g, 1.0f);
}

TEST(ModelWeights, ResidualPathUsesScaledStd) {
  ModelConfig c;  // 4 layers: residual std 0.01
  const ModelWeights w = random_model(c, 3);
  const auto sample_std = [](const Matrix<float>& m) {
    double ss = 0.0;
    for (float v : m.flat()) ss += static_cast<double>(v) * v;
    return std::sqrt(ss / static_cast<double>(m.size()));
  };
  EXPECT_NEAR(sample_std(w.layers[0].wq), 0.02, 0.002);
  EXPECT_NEAR(sample_std(w.layers[0].wo), 0.01, 0.001);
  EXPECT_NEAR(sample_std(w.layers[0].w_down), 0.01, 0.001);
}

TEST(ModelWeights, ValidationCatchesNonFiniteAndShape) {
  ModelWeights w = random_model(oracle::tiny_config(), 1);
  w.layers[1].wk(0, 0) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(validate_weights(w), ConfigError);
  w = random_model(oracle::tiny_config(), 1);
  w.final_norm.pop_back();
  EXPECT_THROW(validate_weights(w), ConfigError);
}

TEST(ProjectSegment, BasePolicyIsPlainProduct) {
  const ModelWeights w = random_model(oracle::tiny_config(), 2);
  Rng rng(5);
  HiddenRows x{Matrix<float>(1, 16), 0};
  for (auto& v : x.rows.flat()) v = static_cast<float>(rng.normal());
  const ProjectionTriple out = project_segment(x, 0, w, ProjectionPolicy());
  EXPECT_TRUE(oracle::same_bits(out.q.row(0), oracle::vec_mat(x.rows.row(0), w.layers[0].wq)));
  EXPECT_TRUE(oracle::same_bits(out.v.row(0), oracle::vec_mat(x.rows.row(0), w.layers[0].wv)));
  EXPECT_EQ(out.q.rows(), out.k.rows());
  EXPECT_EQ(out.k.rows(), out.v.rows());
}

TEST(ProjectSegment, HandWorkedTwoByTwo) {
  const ModelWeights w = two_by_two();
  AdapterSpec spec;
  spec.mode = AdapterMode::kLora;
  spec.rank = 1;
  spec.alpha = 1.0f;
  spec.targets = {Projection::kQuery};
  spec.layers.resize(1);
  spec.layers[0][0] = LowRankDelta{oracle::mat(2, 1, {1, 0}),
                                   oracle::mat(1, 2, {0.5f, 0}), 1.0f};
  const ProjectionPolicy policy = build_policy(spec, std::nullopt);
  const HiddenRows x{oracle::mat(1, 2, {1, 0}), 0};
  const ProjectionTriple out = project_segment(x, 0, w, policy);
  EXPECT_EQ(out.q(0, 0), 1.5f);
  EXPECT_EQ(out.q(0, 1), 2.0f);
}

TEST(ProjectSegment, ZeroBIsBitwiseBase) {
  const ModelConfig c = oracle::tiny_config();
  const ModelWeights w = random_model(c, 4);
  RandomAdapterOptions o;
  o.mode = AdapterMode::kLora;
  o.b_std = 0.0;
  const AdapterSpec spec = random_adapter(c, o, 9);
  Rng rng(1);
  HiddenRows x{Matrix<float>(5, c.d_model), 3};
  for (auto& v : x.rows.flat()) v = static_cast<float>(rng.normal());
  const auto base = project_segment(x, 1, w, ProjectionPolicy());
  const auto adapted = project_segment(x, 1, w, build_policy(spec, std::nullopt));
  EXPECT_EQ(base.q, adapted.q);
  EXPECT_EQ(base.k, adapted.k);
  EXPECT_EQ(base.v, adapted.v);
}

TEST(ProjectSegment, Errors) {
  const ModelWeights w = random_model(oracle::tiny_config(), 4);
  EXPECT_THROW(project_segment(HiddenRows{Matrix<float>(1, 3), 0}, 0, w,
                               ProjectionPolicy()),
               ConfigError);
  HiddenRows bad{Matrix<float>(1, 16), 0};
  bad.rows(0, 2) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(project_segment(bad, 0, w, ProjectionPolicy()), ContractViolation);
  ProjectionPolicy partial;
  partial.define_until(2);
  EXPECT_THROW(project_segment(HiddenRows{Matrix<float>(3, 16), 0}, 0, w, partial),
               ContractViolation);
}

TEST(Rope, PositionZeroIsIdentity) {
  const ModelConfig c = oracle::tiny_config();
  const std::vector<float> v = {0.3f, -1.0f, 2.0f, 0.5f, 1.0f, 1.0f, -0.25f, 4.0f};
  EXPECT_EQ(rope_rotate(v, 0, c), v);
}

TEST(Rope, QuarterRotation) {
  std::vector<float> v = {1.0f, 0.0f};
  kernels::rope<float>(v, std::numbers::pi / 2.0, 10000.0);
  EXPECT_NEAR(v[0], 0.0f, 1e-6);
  EXPECT_NEAR(v[1], 1.0f, 1e-6);
}

TEST(Rope, OddHeadSizeRejected) {
  ModelConfig c;
  c.n_heads = 1;
  c.d_model = 3;
  c.d_head = 3;
  EXPECT_THROW(rope_rotate(std::vector<float>{1, 2, 3}, 1, c), ConfigError);
}

TEST(Rope, MatchesExplicitRotationsAndPreservesNorm) {
  const ModelConfig c = oracle::tiny_config();
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> v(c.d_head);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    const std::size_t pos = rng.below(c.max_positions);
    const auto r = rope_rotate(v, pos, c);
    double n0 = 0.0, n1 = 0.0;
    for (std::size_t i = 0; i < c.d_head / 2; ++i) {
      const double angle =
          static_cast<double>(pos) * std::pow(c.rope_theta, -2.0 * i / c.d_head);
      const double rx = std::cos(angle) * v[2 * i] - std::sin(angle) * v[2 * i + 1];
      const double ry = std::sin(angle) * v[2 * i] + std::cos(angle) * v[2 * i + 1];
      EXPECT_NEAR(r[2 * i], rx, 1e-5);
      EXPECT_NEAR(r[2 * i + 1], ry, 1e-5);
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      n0 += static_cast<double>(v[i]) * v[i];
      n1 += static_cast<double>(r[i]) * r[i];
    }
    EXPECT_NEAR(std::sqrt(n0), std::sqrt(n1), 1e-6 * std::max(1.0, std::sqrt(n0)));
  }
}

TEST(Attend, SingletonReturnsValueTimesWo) {
  const ModelWeights w = random_model(oracle::tiny_config(), 6);
  Rng rng(2);
  Matrix<float> q(1, 16), k(1, 16), v(1, 16);
  for (auto* m : {&q, &k, &v}) {
    for (auto& x : m->flat()) x = static_cast<float>(rng.normal());
  }
  const kernels::KvChunk<float> chunk{k.data(), v.data(), 1};
  const HiddenRows out = attend(q, 0, std::span(&chunk, 1), 1, 0, w);
  EXPECT_TRUE(oracle::same_bits(out.rows.row(0), oracle::vec_mat(v.row(0), w.layers[0].wo)));
}

TEST(Attend, EqualKeysAverageValues) {
  ModelWeights w = random_model(oracle::tiny_config(), 6);
  Matrix<float> eye(16, 16);
  for (std::size_t i = 0; i < 16; ++i) eye(i, i) = 1.0f;
  w.layers[0].wo = eye;
  Matrix<float> q(1, 16), k(2, 16), v(2, 16);
  for (std::size_t j = 0; j < 16; ++j) {
    q(0, j) = 0.1f * static_cast<float>(j);
    k(0, j) = k(1, j) = 0.5f;
    v(0, j) = static_cast<float>(j);
    v(1, j) = 2.0f;
  }
  const kernels::KvChunk<float> chunk{k.data(), v.data(), 2};
  const HiddenRows out = attend(q, 1, std::span(&chunk, 1), 2, 0, w);
  for (std::size_t j = 0; j < 16; ++j) {
    EXPECT_FLOAT_EQ(out.rows(0, j), 0.5f * (static_cast<float>(j) + 2.0f));
  }
}

TEST(Attend, CachedChunksMatchDenseReference) {
  const ModelConfig c = oracle::tiny_config();
  const ModelWeights w = random_model(c, 8);
  Rng rng(3);
  Matrix<float> q(4, 16), k(4, 16), v(4, 16);
  for (auto* m : {&q, &k, &v}) {
    for (auto& x : m->flat()) x = static_cast<float>(rng.normal());
  }
  // Keys split over two chunks, as a forked cache would present them.
  const kernels::KvChunk<float> chunks[2] = {{k.data(), v.data(), 3},
                                             {k.data() + 48, v.data() + 48, 1}};
  const HiddenRows out = attend(q, 0, chunks, 4, 0, w);
  const Matrix<float> heads = oracle::dense_attention(q, k, v, c.n_heads);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(oracle::same_bits(out.rows.row(i), oracle::vec_mat(heads.row(i), w.layers[0].wo)))
        << "row " << i;
  }
}

TEST(Attend, QueryBeyondCoverageRejected) {
  const ModelWeights w = random_model(oracle::tiny_config(), 8);
  Matrix<float> q(2, 16), k(2, 16), v(2, 16);
  const kernels::KvChunk<float> chunk{k.data(), v.data(), 2};
  EXPECT_THROW(attend(q, 1, std::span(&chunk, 1), 2, 0, w), ContractViolation);
}

TEST(ForwardSegment, SingleTokenFromEmptyCache) {
  const ModelConfig c = oracle::tiny_config();
  const ModelWeights w = random_model(c, 1);
  KvCache cache(c);
  const std::vector<TokenId> one = {5};
  const auto logits = forward_segment(one, 0, w, ProjectionPolicy(), cache);
  ASSERT_EQ(logits.size(), c.vocab_size);
  for (float x : logits) EXPECT_TRUE(std::isfinite(x));
  for (std::size_t l = 0; l < c.n_layers; ++l) EXPECT_EQ(cache.layer_length(l), 1u);
}

TEST(ForwardSegment, OneSegmentEqualsEightSingleSteps) {
  const ModelConfig c = oracle::tiny_config();
  const ModelWeights w = random_model(c, 2);
  Rng rng(4);
  const auto tokens = random_tokens(rng, 8, c.vocab_size);
  KvCache whole(c), steps(c);
  const auto a = forward_segment(tokens, 0, w, ProjectionPolicy(), whole);
  std::vector<float> b;
  for (std::size_t i = 0; i < 8; ++i) {
    b = forward_segment(std::span(tokens).subspan(i, 1), i, w, ProjectionPolicy(), steps);
  }
  EXPECT_TRUE(oracle::same_bits(a, b));
}

TEST(ForwardSegment, AnySegmentationMatchesDenseReference) {
  const ModelConfig c = oracle::tiny_config();
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelWeights w = random_model(c, rng.next_u64());
    RandomAdapterOptions o;
    o.rank = 4;
    o.invocation_sequence = {1};
    const AdapterSpec spec = random_adapter(c, o, rng.next_u64());
    const std::size_t n = 2 + rng.below(30);
    const auto tokens = random_tokens(rng, n, c.vocab_size);
    const std::size_t t_invoke = rng.below(n + 1);
    const ProjectionPolicy policy = build_policy(spec, ActivationPoint{t_invoke});
    const auto ref = oracle::reference_forward(w, tokens, oracle::adapter_from(spec, t_invoke));

    KvCache cache(c);
    std::size_t pos = 0;
    while (pos < n) {
      const std::size_t len = 1 + rng.below(n - pos);
      const auto logits = forward_segment(std::span(tokens).subspan(pos, len), pos, w,
                                          policy, cache);
      pos += len;
      ASSERT_TRUE(oracle::same_bits(logits, ref.logits.row(pos - 1)))
          << "trial " << trial << " position " << pos - 1;
    }
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      for (std::size_t p = 0; p < n; ++p) {
        ASSERT_TRUE(oracle::same_bits(cache.key_row(l, p), ref.keys[l].row(p)));
        ASSERT_TRUE(oracle::same_bits(cache.value_row(l, p), ref.values[l].row(p)));
      }
    }
  }
}

TEST(ForwardSegment, CausalityUnderAppendedTokens) {
  const ModelConfig c = oracle::tiny_config();
  const ModelWeights w = random_model(c, 12);
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto tokens = random_tokens(rng, 24, c.vocab_size);
    const std::size_t p = rng.below(tokens.size());
    KvCache prefix(c);
    const auto logits = forward_segment(std::span(tokens).first(p + 1), 0, w,
                                        ProjectionPolicy(), prefix);
    const auto ref = oracle::reference_forward(w, tokens, oracle::no_delta());
    EXPECT_TRUE(oracle::same_bits(logits, ref.logits.row(p))) << "prefix " << p;
  }
}

TEST(ForwardSegment, ZeroDeltaLogitsEqualBase) {
  const ModelConfig c = oracle::tiny_config();
  const ModelWeights w = random_model(c, 3);
  RandomAdapterOptions o;
  o.mode = AdapterMode::kLora;
  o.b_std = 0.0;
  const AdapterSpec spec = random_adapter(c, o, 2);
  const std::vector<TokenId> tokens = {1, 2, 3, 4, 5, 6};
  KvCache a(c), b(c);
  const auto base = forward_segment(tokens, 0, w, ProjectionPolicy(), a);
  const auto adapted = forward_segment(tokens, 0, w, build_policy(spec, std::nullopt), b);
  EXPECT_TRUE(oracle::same_bits(base, adapted));
}

TEST(ForwardSegment, CacheMismatchRejected) {
  const ModelConfig c = oracle::tiny_config();
  const ModelWeights w = random_model(c, 3);
  KvCache cache(c);
  const std::vector<TokenId> tokens = {1, 2};
  EXPECT_THROW(forward_segment(tokens, 1, w, ProjectionPolicy(), cache), ContractViolation);
  forward_segment(tokens, 0, w, ProjectionPolicy(), cache);
  EXPECT_THROW(forward_segment(tokens, 0, w, ProjectionPolicy(), cache), ContractViolation);
  const std::vector<TokenId> outside = {static_cast<TokenId>(c.vocab_size)};
  EXPECT_THROW(forward_segment(outside, 2, w, ProjectionPolicy(), cache), ContractViolation);
}

TEST(GreedyPick, Examples) {
  EXPECT_EQ(greedy_pick(std::vector<float>{0.1f, 0.9f, 0.3f}), 1u);
  EXPECT_EQ(greedy_pick(std::vector<float>{0.5f, 0.5f}), 0u);
  EXPECT_EQ(greedy_pick(std::vector<float>{2.0f, 0.5f}, 0), 1u);
  EXPECT_THROW(greedy_pick(std::vector<float>{}), ContractViolation);
  EXPECT_THROW(greedy_pick(std::vector<float>{0.0f, std::nanf("")}), ContractViolation);
}

TEST(GreedyPick, MatchesLinearScan) {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<float> v(1 + rng.below(300));
    for (auto& x : v) x = static_cast<float>(rng.below(50)) * 0.25f;  // many ties
    EXPECT_EQ(greedy_pick(v), oracle::argmax_scan(v));
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const ModelWeights w = random_model(oracle::tiny_config(), 31);
  const auto bytes = encode_checkpoint(w);
  const ModelWeights back = decode_checkpoint(bytes);
  EXPECT_EQ(back.config, w.config);
  EXPECT_EQ(back.token_embedding, w.token_embedding);
  EXPECT_EQ(back.layers[1].wv, w.layers[1].wv);
  EXPECT_EQ(back.unembedding, w.unembedding);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(encode_checkpoint(random_model(oracle::tiny_config(), 31)), bytes);
}

TEST(Checkpoint, MalformedInputsReportOffsets) {
  const auto bytes = encode_checkpoint(random_model(oracle::tiny_config(), 31));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    decode_checkpoint(bad_magic);
    FAIL() << "bad magic accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  auto bad_version = bytes;
  bad_version[4] = 9;
  try {
    decode_checkpoint(bad_version);
    FAIL() << "bad version accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 7);
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.alre"), IoError);
}

}  // namespace
}  // namespace alora
