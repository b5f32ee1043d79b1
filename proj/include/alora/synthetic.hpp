// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

// Toy supervised tasks whose answers live in the pre-activation context, so
// the adapter must read it back through attention.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "alora/model.hpp"
#include "alora/trainer.hpp"

namespace alora {

enum class TaskKind : std::uint8_t { kCopyKey, kClassifyMarker };

const char* task_name(TaskKind kind);
TaskKind parse_task(const std::string& name);

// Token layout: 0 EOS, 1 KEY, 2-3 copy_key invocation, 4-5 classify_marker
// invocation, 6 MARKER, 7 YES, 8 NO, values from 16, distractors from 64.
namespace task_tokens {
inline constexpr TokenId kKey = 1;
inline constexpr TokenId kMarker = 6;
inline constexpr TokenId kYes = 7;
inline constexpr TokenId kNo = 8;
inline constexpr TokenId kValueBase = 16;
inline constexpr TokenId kDistractorBase = 64;
}  // namespace task_tokens

struct TaskSizes {
  std::size_t examples = 1000;
  std::size_t distractors = 8;        // context tokens besides the payload
  std::size_t n_values = 8;           // copy_key answer alphabet
  std::size_t distractor_vocab = 32;  // distinct distractor ids
};

std::vector<TokenId> task_invocation(TaskKind kind);

// Smallest vocabulary that holds every token the task can emit.
std::size_t required_vocab(const TaskSizes& sizes);

// copy_key: distractors with "KEY value" inserted at a random position; the
// target is the value. classify_marker: MARKER appears at a random position
// with probability one half; the target is YES or NO accordingly.
// Throws ConfigError for empty alphabets or values that would collide with
// distractor ids.
std::vector<SftExample> make_synthetic_task(TaskKind kind,
                                            const TaskSizes& sizes,
                                            std::uint64_t seed);

}  // namespace alora
