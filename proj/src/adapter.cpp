// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/adapter.hpp"

#include <algorithm>
#include <string>

#include "alora/error.hpp"
#include "alora/kernels.hpp"
#include "alora/rng.hpp"
#include "container.hpp"

namespace alora {
namespace {

constexpr std::string_view kMagic = "ALAD";
constexpr std::uint16_t kAdapterVersion = 1;

std::string tensor_name(std::size_t layer, Projection p, const char* factor) {
  return "layers." + std::to_string(layer) + "." + projection_name(p) + "." +
         factor;
}

}  // namespace

const char* projection_name(Projection p) {
  switch (p) {
    case Projection::kQuery: return "q";
    case Projection::kKey: return "k";
    case Projection::kValue: return "v";
  }
  return "?";
}

Projection parse_projection(const std::string& name) {
  if (name == "q") return Projection::kQuery;
  if (name == "k") return Projection::kKey;
  if (name == "v") return Projection::kValue;
  throw ConfigError("unknown projection \"" + name + "\"");
}

const char* mode_name(AdapterMode mode) {
  return mode == AdapterMode::kLora ? "lora" : "alora";
}

AdapterMode parse_mode(const std::string& name) {
  if (name == "lora") return AdapterMode::kLora;
  if (name == "alora") return AdapterMode::kAlora;
  throw ConfigError("unknown adapter mode \"" + name + "\"");
}

bool AdapterSpec::targets_projection(Projection which) const {
  return std::find(targets.begin(), targets.end(), which) != targets.end();
}

void AdapterSpec::validate(const ModelConfig& config) const {
  if (rank == 0) throw ConfigError("adapter rank must be positive");
  if (rank > config.d_model) {
    throw ConfigError("adapter rank " + std::to_string(rank) +
                      " exceeds d_model " + std::to_string(config.d_model));
  }
  if (!(alpha > 0.0f)) throw ConfigError("adapter alpha must be positive");
  if (mode == AdapterMode::kAlora && invocation_sequence.empty()) {
    throw ConfigError("aLoRA adapter requires an invocation sequence");
  }
  if (layers.size() != config.n_layers) {
    throw ConfigError("adapter has " + std::to_string(layers.size()) +
                      " layers, model has " + std::to_string(config.n_layers));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (Projection p : kAllProjections) {
      const auto* d = delta(l, p);
      if (d == nullptr) continue;
      if (!targets_projection(p)) {
        throw ConfigError("delta present for untargeted projection " +
                          tensor_name(l, p, ""));
      }
      if (d->a.rows() != config.d_model || d->a.cols() != rank ||
          d->b.rows() != rank || d->b.cols() != config.d_model) {
        throw ConfigError("delta " + tensor_name(l, p, "") +
                          " does not match d_model/rank");
      }
      if (!d->a.all_finite() || !d->b.all_finite()) {
        throw ConfigError("delta " + tensor_name(l, p, "") +
                          " contains non-finite values");
      }
    }
  }
}

std::vector<float> delta_apply(std::span<const float> x,
                               const Matrix<float>& w,
                               const LowRankDelta& delta) {
  if (x.size() != w.rows() || delta.a.rows() != w.rows() ||
      delta.b.cols() != w.cols() || delta.a.cols() != delta.b.rows()) {
    throw ConfigError("delta_apply: shape mismatch");
  }
  std::vector<float> y(w.cols());
  std::vector<float> low(delta.rank());
  std::vector<float> scratch(w.cols());
  kernels::matvec<float>(x, w, y);
  kernels::matvec<float>(x, delta.a, low);
  kernels::add_low_rank<float>(low, delta.b, delta.scale(), y, scratch);
  return y;
}

std::optional<std::size_t> find_last_occurrence(
    std::span<const TokenId> haystack, std::span<const TokenId> needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::nullopt;
  for (std::size_t start = haystack.size() - needle.size() + 1; start-- > 0;) {
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + start)) {
      return start;
    }
  }
  return std::nullopt;
}

ActivationPoint find_invocation(std::span<const TokenId> tokens,
                                const AdapterSpec& spec) {
  if (spec.mode != AdapterMode::kAlora) {
    throw ContractViolation("find_invocation requires an aLoRA adapter");
  }
  const auto start = find_last_occurrence(tokens, spec.invocation_sequence);
  if (!start) {
    throw NotInvoked("invocation sequence of adapter " +
                     std::to_string(spec.id) + " not found");
  }
  return {*start + 1};
}

AdapterSpec random_adapter(const ModelConfig& config,
                           const RandomAdapterOptions& options,
                           std::uint64_t seed) {
  Rng rng(seed);
  AdapterSpec spec;
  spec.id = options.id;
  spec.mode = options.mode;
  spec.rank = options.rank;
  spec.alpha = options.alpha;
  spec.invocation_sequence = options.invocation_sequence;
  spec.layers.resize(config.n_layers);
  for (auto& layer : spec.layers) {
    for (Projection p : spec.targets) {
      LowRankDelta d;
      d.alpha = options.alpha;
      d.a = Matrix<float>(config.d_model, options.rank);
      d.b = Matrix<float>(options.rank, config.d_model);
      for (auto& v : d.a.flat()) {
        v = static_cast<float>(rng.normal(0.0, options.a_std));
      }
      if (options.b_std > 0.0) {
        for (auto& v : d.b.flat()) {
          v = static_cast<float>(rng.normal(0.0, options.b_std));
        }
      }
      layer[static_cast<std::size_t>(p)] = std::move(d);
    }
  }
  spec.validate(config);
  return spec;
}

std::vector<std::uint8_t> encode_adapter(const AdapterSpec& spec) {
  detail::ContainerWriter writer;
  nlohmann::json targets = nlohmann::json::array();
  for (Projection p : spec.targets) targets.push_back(projection_name(p));
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    for (Projection p : kAllProjections) {
      const auto* d = spec.delta(l, p);
      if (d == nullptr) continue;
      if (d->rank() != spec.rank || d->alpha != spec.alpha) {
        throw ConfigError("adapter file requires uniform rank and alpha");
      }
      writer.add(tensor_name(l, p, "a"), d->a);
      writer.add(tensor_name(l, p, "b"), d->b);
    }
  }
  nlohmann::json header;
  header["adapter_id"] = spec.id;
  header["mode"] = mode_name(spec.mode);
  header["alpha"] = spec.alpha;
  header["r"] = spec.rank;
  header["n_layers"] = spec.layers.size();
  header["targets"] = std::move(targets);
  header["invocation_sequence"] = spec.invocation_sequence;
  header["max_new_tokens"] = spec.max_new_tokens;
  return writer.finish(kMagic, kAdapterVersion, std::move(header));
}

AdapterSpec decode_adapter(std::span<const std::uint8_t> bytes) {
  detail::ContainerReader reader(bytes, kMagic, kAdapterVersion);
  const std::size_t at = reader.header_offset();
  AdapterSpec spec;
  std::size_t n_layers = 0;
  try {
    const auto& h = reader.header();
    spec.id = h.at("adapter_id").get<AdapterId>();
    spec.mode = parse_mode(h.at("mode").get<std::string>());
    spec.alpha = h.at("alpha").get<float>();
    spec.rank = h.at("r").get<std::size_t>();
    n_layers = h.at("n_layers").get<std::size_t>();
    spec.targets.clear();
    for (const auto& t : h.at("targets")) {
      spec.targets.push_back(parse_projection(t.get<std::string>()));
    }
    spec.invocation_sequence =
        h.at("invocation_sequence").get<std::vector<TokenId>>();
    spec.max_new_tokens = h.at("max_new_tokens").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed adapter header: ") + e.what(), at);
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), at);
  }
  if (spec.rank == 0) throw FormatError("adapter rank must be positive", at);

  spec.layers.resize(n_layers);
  std::size_t d_model = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    for (Projection p : spec.targets) {
      const auto name_a = tensor_name(l, p, "a");
      if (!reader.has(name_a)) {
        throw FormatError("missing tensor \"" + name_a + "\"", at);
      }
      if (d_model == 0) {
        const auto& shape = reader.header()["tensors"];
        for (const auto& t : shape) {
          if (t["name"] == name_a) d_model = t["shape"][0].get<std::size_t>();
        }
        if (spec.rank > d_model) {
          throw FormatError("adapter rank " + std::to_string(spec.rank) +
                                " exceeds d_model " + std::to_string(d_model),
                            at);
        }
      }
      LowRankDelta d;
      d.alpha = spec.alpha;
      d.a = reader.matrix(name_a, d_model, spec.rank);
      d.b = reader.matrix(tensor_name(l, p, "b"), spec.rank, d_model);
      spec.layers[l][static_cast<std::size_t>(p)] = std::move(d);
    }
  }
  if (spec.mode == AdapterMode::kAlora && spec.invocation_sequence.empty()) {
    throw FormatError("aLoRA adapter lacks an invocation sequence", at);
  }
  return spec;
}

void save_adapter(const AdapterSpec& spec, const std::filesystem::path& path) {
  detail::write_file(path, encode_adapter(spec));
}

AdapterSpec load_adapter(const std::filesystem::path& path) {
  return decode_adapter(detail::read_file(path));
}

}  // namespace alora
