// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alora/model.hpp"
#include "alora/provenance.hpp"
#include "alora/tensor.hpp"

namespace alora {

enum class Projection : std::uint8_t { kQuery = 0, kKey = 1, kValue = 2 };
inline constexpr std::array<Projection, 3> kAllProjections = {
    Projection::kQuery, Projection::kKey, Projection::kValue};

const char* projection_name(Projection p);
Projection parse_projection(const std::string& name);

enum class AdapterMode : std::uint8_t { kLora, kAlora };

const char* mode_name(AdapterMode mode);
AdapterMode parse_mode(const std::string& name);

// Rank-r correction (alpha/r)·A·B to a d_model × d_model projection.
struct LowRankDelta {
  Matrix<float> a;  // d_model × r
  Matrix<float> b;  // r × d_model
  float alpha = 1.0f;

  std::size_t rank() const { return a.cols(); }
  float scale() const { return alpha / static_cast<float>(rank()); }
  bool operator==(const LowRankDelta&) const = default;
};

struct AdapterSpec {
  AdapterId id = 0;
  AdapterMode mode = AdapterMode::kAlora;
  std::size_t rank = 8;
  float alpha = 32.0f;
  std::vector<Projection> targets = {Projection::kQuery, Projection::kKey,
                                     Projection::kValue};
  // layers[l][projection] holds a delta only for targeted projections.
  std::vector<std::array<std::optional<LowRankDelta>, 3>> layers;
  std::vector<TokenId> invocation_sequence;
  std::size_t max_new_tokens = 16;

  const LowRankDelta* delta(std::size_t layer, Projection which) const {
    const auto& slot = layers[layer][static_cast<std::size_t>(which)];
    return slot ? &*slot : nullptr;
  }
  bool targets_projection(Projection which) const;

  // Throws ConfigError on shape, rank, or target-list inconsistencies, or
  // when an aLoRA spec lacks an invocation sequence.
  void validate(const ModelConfig& config) const;

  bool operator==(const AdapterSpec&) const = default;
};

// x·W + (alpha/r)·(x·A)·B, evaluated low-rank first; A·B is never formed.
std::vector<float> delta_apply(std::span<const float> x, const Matrix<float>& w,
                               const LowRankDelta& delta);

struct ActivationPoint {
  std::size_t t_invoke = 0;  // first position projected with adapted weights
};

// Start index of the last occurrence of `needle` in `haystack`.
std::optional<std::size_t> find_last_occurrence(
    std::span<const TokenId> haystack, std::span<const TokenId> needle);

// Adapted weights switch on one token after the start of the last
// occurrence of the invocation sequence. Throws NotInvoked when absent.
ActivationPoint find_invocation(std::span<const TokenId> tokens,
                                const AdapterSpec& spec);

struct RandomAdapterOptions {
  AdapterId id = 1;
  AdapterMode mode = AdapterMode::kAlora;
  std::size_t rank = 8;
  float alpha = 32.0f;
  std::vector<TokenId> invocation_sequence;
  double a_std = 0.02;
  double b_std = 0.02;  // zero gives the standard training init (B = 0)
};

AdapterSpec random_adapter(const ModelConfig& config,
                           const RandomAdapterOptions& options,
                           std::uint64_t seed);

// Adapter file: "ALAD", u16 version, u32 header length, JSON header, raw
// little-endian f32 tensors.
void save_adapter(const AdapterSpec& spec, const std::filesystem::path& path);
AdapterSpec load_adapter(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_adapter(const AdapterSpec& spec);
AdapterSpec decode_adapter(std::span<const std::uint8_t> bytes);

}  // namespace alora
