// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/synthetic.hpp"

#include "alora/error.hpp"
#include "alora/rng.hpp"

namespace alora {

const char* task_name(TaskKind kind) {
  return kind == TaskKind::kCopyKey ? "copy_key" : "classify_marker";
}

TaskKind parse_task(const std::string& name) {
  if (name == "copy_key") return TaskKind::kCopyKey;
  if (name == "classify_marker") return TaskKind::kClassifyMarker;
  throw ConfigError("unknown task '" + name +
                    "' (expected copy_key or classify_marker)");
}

std::vector<TokenId> task_invocation(TaskKind kind) {
  if (kind == TaskKind::kCopyKey) return {2, 3};
  return {4, 5};
}

std::size_t required_vocab(const TaskSizes& sizes) {
  return task_tokens::kDistractorBase + sizes.distractor_vocab;
}

std::vector<SftExample> make_synthetic_task(TaskKind kind,
                                            const TaskSizes& sizes,
                                            std::uint64_t seed) {
  using namespace task_tokens;
  if (sizes.distractors > 0 && sizes.distractor_vocab == 0) {
    throw ConfigError("distractors need a non-empty distractor vocabulary");
  }
  if (kind == TaskKind::kCopyKey &&
      (sizes.n_values == 0 || kValueBase + sizes.n_values > kDistractorBase)) {
    throw ConfigError("copy_key needs between 1 and " +
                      std::to_string(kDistractorBase - kValueBase) +
                      " values");
  }
  Rng rng(seed);
  std::vector<SftExample> out;
  out.reserve(sizes.examples);
  for (std::size_t e = 0; e < sizes.examples; ++e) {
    SftExample ex;
    for (std::size_t i = 0; i < sizes.distractors; ++i) {
      ex.context.push_back(kDistractorBase + static_cast<TokenId>(
                                                 rng.below(sizes.distractor_vocab)));
    }
    const auto at = static_cast<std::ptrdiff_t>(rng.below(sizes.distractors + 1));
    if (kind == TaskKind::kCopyKey) {
      const TokenId value =
          kValueBase + static_cast<TokenId>(rng.below(sizes.n_values));
      ex.context.insert(ex.context.begin() + at, {kKey, value});
      ex.target = {value};
    } else {
      const bool present = rng.below(2) == 1;
      if (present) ex.context.insert(ex.context.begin() + at, kMarker);
      ex.target = {present ? kYes : kNo};
    }
    ex.invocation = task_invocation(kind);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace alora
