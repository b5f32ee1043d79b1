// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "alora/model.hpp"

namespace alora {

using AdapterId = std::uint32_t;

// Which weights produced a cached position's key/value rows.
struct Provenance {
  std::optional<AdapterId> adapter;

  static Provenance base() { return {}; }
  static Provenance of(AdapterId id) { return {id}; }

  bool is_base() const { return !adapter.has_value(); }
  std::string to_string() const {
    return adapter ? "Adapter(" + std::to_string(*adapter) + ")" : "Base";
  }
  bool operator==(const Provenance&) const = default;
};

struct PositionTag {
  TokenId token = 0;
  Provenance producer;
  bool operator==(const PositionTag&) const = default;
};

}  // namespace alora
