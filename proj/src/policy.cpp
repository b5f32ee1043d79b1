// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/policy.hpp"

#include <string>

#include "alora/error.hpp"

namespace alora {

Verdict ProjectionPolicy::verdict(std::size_t position) const {
  if (defined_until_ && position >= *defined_until_) {
    throw ContractViolation("projection policy undefined at position " +
                            std::to_string(position));
  }
  for (auto it = overrides_.rbegin(); it != overrides_.rend(); ++it) {
    if (it->first == position) return it->second;
  }
  if (adapter_ == nullptr) return Verdict::kBase;
  return position >= adapted_from_ ? Verdict::kAdapted : Verdict::kBase;
}

Provenance ProjectionPolicy::provenance(std::size_t position) const {
  if (verdict(position) == Verdict::kBase || adapter_ == nullptr) {
    return Provenance::base();
  }
  return Provenance::of(adapter_->id);
}

const LowRankDelta* ProjectionPolicy::delta(std::size_t layer,
                                            Projection which,
                                            std::size_t position) const {
  if (verdict(position) == Verdict::kBase || adapter_ == nullptr) {
    return nullptr;
  }
  return adapter_->delta(layer, which);
}

std::optional<std::size_t> ProjectionPolicy::activation() const {
  if (adapter_ == nullptr) return std::nullopt;
  return adapted_from_;
}

ProjectionPolicy build_policy(const AdapterSpec& spec,
                              std::optional<ActivationPoint> activation) {
  if (spec.mode == AdapterMode::kLora) {
    if (activation) {
      throw ContractViolation("LoRA policies take no activation point");
    }
    return ProjectionPolicy(&spec, 0);
  }
  if (!activation) {
    throw ContractViolation("aLoRA policies require an activation point");
  }
  return ProjectionPolicy(&spec, activation->t_invoke);
}

}  // namespace alora
