// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

// Randomized invariant checks shared by the command-line tool and the test
// suites. Each check runs seeded trials and reports the first failure.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "alora/adapter.hpp"
#include "alora/model.hpp"

namespace alora {

struct VerifyOptions {
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  // Null: every trial draws a fresh random model with `random_config`.
  const ModelWeights* weights = nullptr;
  ModelConfig random_config;
  // Null: every trial draws a random adapter. Otherwise this adapter (which
  // must be aLoRA) is used in every trial.
  const AdapterSpec* adapter = nullptr;
  std::vector<std::size_t> ranks = {8, 32};
  std::size_t min_prompt = 16;
  std::size_t max_prompt = 128;
  std::size_t generated_tokens = 32;
  // Test hook: forces one random position before t_invoke to be adapted in
  // the aLoRA pass of the KV-prefix check.
  bool flip_pre_invocation_verdict = false;
};

struct CheckResult {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  std::string first_failure;

  bool passed() const { return failures == 0; }
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  std::vector<std::string> warnings;

  bool passed() const;
};

// K and V rows at every layer and every position before t_invoke are
// bitwise equal between a base pass and an aLoRA pass.
CheckResult check_kv_prefix(const VerifyOptions& options);

// invoke_intrinsic over a reused base cache emits the same tokens and logits,
// bitwise, as a from-scratch generation and as a single uncached forward of
// the whole final sequence.
CheckResult check_cache_reuse(const VerifyOptions& options);

// aLoRA with t_invoke = 0 reproduces LoRA with the same deltas bitwise.
CheckResult check_zero_invoke_reduction(const VerifyOptions& options);

// All-zero deltas reproduce the base model bitwise.
CheckResult check_zero_delta_identity(const VerifyOptions& options);

// Tags after invocation are Base before t_invoke and Adapter(id) after;
// the base model resuming from that cache reuses exactly the Base prefix
// and matches a fresh base generation bitwise.
CheckResult check_provenance_rules(const VerifyOptions& options);

// Every check above. Zero trials passes vacuously with a warning.
VerifyReport run_verify_suite(const VerifyOptions& options);

std::string format_report(const VerifyReport& report);

}  // namespace alora
