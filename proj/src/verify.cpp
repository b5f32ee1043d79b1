// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/verify.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>

#include "alora/engine.hpp"
#include "alora/error.hpp"
#include "alora/forward.hpp"
#include "alora/policy.hpp"
#include "alora/rng.hpp"
#include "alora/trainer.hpp"

namespace alora {

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const CheckResult& c) { return c.passed(); });
}

namespace {

// Everything one trial needs, derived from (seed, trial).
struct Trial {
  std::shared_ptr<const ModelWeights> weights;
  AdapterSpec adapter;
  std::vector<TokenId> prompt;  // ends somewhere after the invocation
  std::size_t t_invoke = 0;
  Rng rng{0};
};

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::vector<TokenId> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> out(n);
  for (auto& t : out) t = static_cast<TokenId>(rng.below(vocab));
  return out;
}

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

Trial make_trial(const VerifyOptions& o, std::size_t index) {
  Trial t;
  t.rng = Rng(o.seed * 0x100000001b3ULL + index * 0x9e3779b97f4a7c15ULL + 1);
  if (o.weights != nullptr) {
    t.weights = std::shared_ptr<const ModelWeights>(o.weights,
                                                    [](const ModelWeights*) {});
  } else {
    t.weights = std::make_shared<const ModelWeights>(
        random_model(o.random_config, t.rng.next_u64()));
  }
  const ModelConfig& c = t.weights->config;
  if (o.adapter != nullptr) {
    if (o.adapter->mode != AdapterMode::kAlora) {
      throw ConfigError("verification needs an aLoRA adapter");
    }
    o.adapter->validate(c);
    t.adapter = *o.adapter;
  } else {
    RandomAdapterOptions ro;
    ro.id = 1 + static_cast<AdapterId>(t.rng.below(1000));
    ro.mode = AdapterMode::kAlora;
    ro.rank = o.ranks[t.rng.below(o.ranks.size())];
    ro.rank = std::min(ro.rank, c.d_model);
    ro.invocation_sequence =
        random_tokens(t.rng, between(t.rng, 1, 3), c.vocab_size);
    t.adapter = random_adapter(c, ro, t.rng.next_u64());
  }

  const std::size_t max_len = std::min(o.max_prompt, c.max_positions);
  const std::size_t inv_len = t.adapter.invocation_sequence.size();
  if (max_len < inv_len || o.min_prompt > max_len) {
    throw ConfigError("prompt length range cannot hold the invocation");
  }
  const std::size_t len = between(t.rng, std::max(o.min_prompt, inv_len), max_len);
  // Place the invocation at a random start and redraw the filler until no
  // later occurrence shadows it.
  for (;;) {
    const std::size_t start = between(t.rng, 0, len - inv_len);
    t.prompt = random_tokens(t.rng, len, c.vocab_size);
    std::copy(t.adapter.invocation_sequence.begin(),
              t.adapter.invocation_sequence.end(), t.prompt.begin() + start);
    if (find_invocation(t.prompt, t.adapter).t_invoke == start + 1) {
      t.t_invoke = start + 1;
      return t;
    }
  }
}

template <typename Body>
CheckResult run_check(const char* name, const VerifyOptions& o, Body body) {
  CheckResult result{name, o.trials, 0, {}};
  for (std::size_t i = 0; i < o.trials; ++i) {
    std::string why;
    try {
      Trial t = make_trial(o, i);
      why = body(t);
    } catch (const Error& e) {
      why = std::string("error: ") + e.what();
    }
    if (!why.empty()) {
      if (result.failures == 0) {
        result.first_failure = "trial " + std::to_string(i) + ": " + why;
      }
      ++result.failures;
    }
  }
  return result;
}

std::string compare_caches(const KvCache& a, const KvCache& b,
                           std::size_t positions) {
  for (std::size_t l = 0; l < a.n_layers(); ++l) {
    for (std::size_t p = 0; p < positions; ++p) {
      if (!same_bits(a.key_row(l, p), b.key_row(l, p))) {
        return "key row differs at layer " + std::to_string(l) +
               ", position " + std::to_string(p);
      }
      if (!same_bits(a.value_row(l, p), b.value_row(l, p))) {
        return "value row differs at layer " + std::to_string(l) +
               ", position " + std::to_string(p);
      }
    }
  }
  return {};
}

std::string compare_generations(const GenerationResult& a,
                                const GenerationResult& b) {
  if (a.new_tokens != b.new_tokens) return "generated tokens differ";
  if (a.logits.size() != b.logits.size()) return "logit count differs";
  for (std::size_t i = 0; i < a.logits.size(); ++i) {
    if (!same_bits(a.logits[i], b.logits[i])) {
      return "logits differ at step " + std::to_string(i);
    }
  }
  if (a.cache.length() != b.cache.length()) return "cache lengths differ";
  return compare_caches(a.cache, b.cache, a.cache.length());
}

AdapterSpec with_mode(AdapterSpec spec, AdapterMode mode) {
  spec.mode = mode;
  return spec;
}

}  // namespace

CheckResult check_kv_prefix(const VerifyOptions& o) {
  return run_check("kv_prefix_bitwise", o, [&](Trial& t) -> std::string {
    const ModelWeights& w = *t.weights;
    KvCache base(w.config), adapted(w.config);
    forward_segment(t.prompt, 0, w, ProjectionPolicy(), base);
    ProjectionPolicy policy =
        build_policy(t.adapter, ActivationPoint{t.t_invoke});
    if (o.flip_pre_invocation_verdict) {
      policy.override_verdict(t.rng.below(t.t_invoke), Verdict::kAdapted);
    }
    forward_segment(t.prompt, 0, w, policy, adapted);
    return compare_caches(base, adapted, t.t_invoke);
  });
}

CheckResult check_cache_reuse(const VerifyOptions& o) {
  return run_check("cache_reuse_oracle", o, [&](Trial& t) -> std::string {
    const Engine engine(t.weights);
    // Base turn: the prompt up to the invocation plus a short answer.
    GenerationRequest base_req;
    base_req.prompt_tokens.assign(t.prompt.begin(),
                                  t.prompt.begin() + (t.t_invoke - 1));
    if (base_req.prompt_tokens.empty()) {
      base_req.prompt_tokens.push_back(static_cast<TokenId>(
          t.rng.below(engine.config().vocab_size)));
    }
    base_req.min_new_tokens = base_req.max_new_tokens = 4;
    const GenerationResult base = engine.generate(base_req);

    const std::vector<TokenId> extra(t.prompt.begin() + (t.t_invoke - 1),
                                     t.prompt.end());
    DecodeSettings settings;
    settings.min_new_tokens = settings.max_new_tokens = o.generated_tokens;
    settings.record_logits = true;
    const GenerationResult reused =
        engine.invoke_intrinsic(base.cache, extra, t.adapter, settings);
    if (reused.reused_positions != base.cache.length()) {
      return "expected " + std::to_string(base.cache.length()) +
             " reused positions, got " +
             std::to_string(reused.reused_positions);
    }

    GenerationRequest fresh_req;
    fresh_req.prompt_tokens = base.cache.token_ids();
    fresh_req.prompt_tokens.insert(fresh_req.prompt_tokens.end(),
                                   extra.begin(), extra.end());
    fresh_req.adapter = &t.adapter;
    fresh_req.min_new_tokens = fresh_req.max_new_tokens = o.generated_tokens;
    fresh_req.record_logits = true;
    const GenerationResult fresh = engine.generate(fresh_req);
    if (const std::string why = compare_generations(reused, fresh);
        !why.empty()) {
      return "vs fresh generation: " + why;
    }

    // One uncached forward over the final sequence yields every step's
    // logits at once.
    const std::size_t t_invoke = *reused.t_invoke;
    SftExample whole;
    whole.context.assign(fresh_req.prompt_tokens.begin(),
                         fresh_req.prompt_tokens.begin() + (t_invoke - 1));
    whole.invocation.assign(fresh_req.prompt_tokens.begin() + (t_invoke - 1),
                            fresh_req.prompt_tokens.end());
    whole.target = reused.new_tokens;
    const Matrix<float> logits = sequence_logits(
        *t.weights, AdapterParams<float>::from_spec(t.adapter),
        AdapterMode::kAlora, whole);
    for (std::size_t s = 0; s < reused.new_tokens.size(); ++s) {
      const auto row = logits.row(whole.first_target() + s - 1);
      if (!same_bits(row, reused.logits[s])) {
        return "logits differ from uncached forward at step " +
               std::to_string(s);
      }
      if (greedy_pick(row, kEosToken) != reused.new_tokens[s]) {
        return "token differs from uncached forward at step " +
               std::to_string(s);
      }
    }
    return {};
  });
}

CheckResult check_zero_invoke_reduction(const VerifyOptions& o) {
  return run_check("zero_invoke_reduction", o, [&](Trial& t) -> std::string {
    const Engine engine(t.weights);
    const AdapterSpec lora = with_mode(t.adapter, AdapterMode::kLora);
    DecodeSettings settings;
    settings.min_new_tokens = settings.max_new_tokens = 8;
    settings.record_logits = true;
    const GenerationResult expected = engine.lora_invoke(t.prompt, lora, settings);

    GenerationRequest req;
    req.prompt_tokens = t.prompt;
    req.adapter = &t.adapter;
    req.t_invoke = 0;
    req.min_new_tokens = req.max_new_tokens = 8;
    req.record_logits = true;
    const GenerationResult actual = engine.generate(req);
    return compare_generations(actual, expected);
  });
}

CheckResult check_zero_delta_identity(const VerifyOptions& o) {
  return run_check("zero_delta_identity", o, [&](Trial& t) -> std::string {
    const Engine engine(t.weights);
    AdapterSpec zero = t.adapter;
    for (auto& layer : zero.layers) {
      for (auto& slot : layer) {
        if (!slot) continue;
        std::fill(slot->a.flat().begin(), slot->a.flat().end(), 0.0f);
        std::fill(slot->b.flat().begin(), slot->b.flat().end(), 0.0f);
      }
    }
    GenerationRequest req;
    req.prompt_tokens = t.prompt;
    req.min_new_tokens = req.max_new_tokens = 8;
    req.record_logits = true;
    const GenerationResult base = engine.generate(req);
    for (AdapterMode mode : {AdapterMode::kAlora, AdapterMode::kLora}) {
      const AdapterSpec spec = with_mode(zero, mode);
      req.adapter = &spec;
      const GenerationResult adapted = engine.generate(req);
      if (const std::string why = compare_generations(adapted, base);
          !why.empty()) {
        return std::string(mode_name(mode)) + ": " + why;
      }
    }
    return {};
  });
}

CheckResult check_provenance_rules(const VerifyOptions& o) {
  return run_check("provenance_rules", o, [&](Trial& t) -> std::string {
    const Engine engine(t.weights);
    GenerationRequest req;
    req.prompt_tokens = t.prompt;
    req.adapter = &t.adapter;
    req.min_new_tokens = req.max_new_tokens = 4;
    const GenerationResult adapted = engine.generate(req);
    if (adapted.t_invoke != t.t_invoke) return "activation point mismatch";
    const Provenance mine = Provenance::of(t.adapter.id);
    for (std::size_t p = 0; p < adapted.cache.length(); ++p) {
      const Provenance want = p < t.t_invoke ? Provenance::base() : mine;
      if (!(adapted.cache.tag(p).producer == want)) {
        return "position " + std::to_string(p) + " tagged " +
               adapted.cache.tag(p).producer.to_string() + ", expected " +
               want.to_string();
      }
    }
    if (reusable_prefix(adapted.cache, Provenance::base()) != t.t_invoke) {
      return "base-reusable prefix differs from t_invoke";
    }

    DecodeSettings settings;
    settings.min_new_tokens = settings.max_new_tokens = 4;
    settings.record_logits = true;
    const std::vector<TokenId> continuation = {
        static_cast<TokenId>(t.rng.below(engine.config().vocab_size))};
    const GenerationResult resumed =
        engine.resume_base(adapted, continuation, settings);
    if (resumed.reused_positions != t.t_invoke) {
      return "base resumed with " + std::to_string(resumed.reused_positions) +
             " reused positions, expected " + std::to_string(t.t_invoke);
    }
    GenerationRequest fresh;
    fresh.prompt_tokens = adapted.cache.token_ids();
    fresh.prompt_tokens.insert(fresh.prompt_tokens.end(), continuation.begin(),
                               continuation.end());
    fresh.min_new_tokens = fresh.max_new_tokens = 4;
    fresh.record_logits = true;
    const GenerationResult expected = engine.generate(fresh);
    if (const std::string why = compare_generations(resumed, expected);
        !why.empty()) {
      return "resumed base: " + why;
    }
    return {};
  });
}

VerifyReport run_verify_suite(const VerifyOptions& options) {
  VerifyReport report;
  if (options.trials == 0) {
    report.warnings.push_back("zero trials requested; nothing was checked");
  }
  report.checks.push_back(check_kv_prefix(options));
  report.checks.push_back(check_cache_reuse(options));
  report.checks.push_back(check_zero_invoke_reduction(options));
  report.checks.push_back(check_zero_delta_identity(options));
  report.checks.push_back(check_provenance_rules(options));
  return report;
}

std::string format_report(const VerifyReport& report) {
  std::ostringstream out;
  for (const auto& w : report.warnings) out << "warning: " << w << '\n';
  for (const auto& c : report.checks) {
    out << (c.passed() ? "PASS " : "FAIL ") << c.name << " ("
        << c.trials - c.failures << '/' << c.trials << ')';
    if (!c.passed()) out << ": " << c.first_failure;
    out << '\n';
  }
  return out.str();
}

}  // namespace alora
