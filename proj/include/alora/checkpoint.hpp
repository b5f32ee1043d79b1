// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "alora/model.hpp"

namespace alora {

// Checkpoint file: magic "ALRE", u16 LE format version, u32 LE header
// length, UTF-8 JSON header (config and ordered tensor index of name, shape,
// byte offset into the data section), then raw f32 LE tensor data.
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ModelWeights& weights);
ModelWeights decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelWeights& weights,
                     const std::filesystem::path& path);
ModelWeights load_checkpoint(const std::filesystem::path& path);

}  // namespace alora
