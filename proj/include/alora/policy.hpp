// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "alora/adapter.hpp"
#include "alora/provenance.hpp"

namespace alora {

enum class Verdict : std::uint8_t { kBase, kAdapted };

// Decides, per absolute position, whether projections use the base weights
// or the adapter's corrected weights. Holds a non-owning pointer to the
// adapter, which must outlive the policy.
class ProjectionPolicy {
 public:
  // Base weights everywhere.
  ProjectionPolicy() = default;

  // Adapted for every position >= adapted_from.
  ProjectionPolicy(const AdapterSpec* adapter, std::size_t adapted_from)
      : adapter_(adapter), adapted_from_(adapted_from) {}

  // Throws ContractViolation for positions outside the defined range.
  Verdict verdict(std::size_t position) const;
  Provenance provenance(std::size_t position) const;

  // Delta applied to `which` at `position`, or null for base weights.
  const LowRankDelta* delta(std::size_t layer, Projection which,
                            std::size_t position) const;

  const AdapterSpec* adapter() const { return adapter_; }
  std::optional<std::size_t> activation() const;

  // Leaves positions >= end undefined.
  ProjectionPolicy& define_until(std::size_t end) {
    defined_until_ = end;
    return *this;
  }

  // Test hook: forces the verdict at one position regardless of activation.
  ProjectionPolicy& override_verdict(std::size_t position, Verdict verdict) {
    overrides_.emplace_back(position, verdict);
    return *this;
  }

 private:
  const AdapterSpec* adapter_ = nullptr;
  std::size_t adapted_from_ = std::numeric_limits<std::size_t>::max();
  std::optional<std::size_t> defined_until_;
  std::vector<std::pair<std::size_t, Verdict>> overrides_;
};

// LoRA forbids an activation point (adapted everywhere); aLoRA requires one.
// Throws ContractViolation otherwise.
ProjectionPolicy build_policy(const AdapterSpec& spec,
                              std::optional<ActivationPoint> activation);

}  // namespace alora
