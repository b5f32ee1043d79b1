// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alora/kernels.hpp"
#include "alora/model.hpp"
#include "alora/provenance.hpp"
#include "alora/tensor.hpp"

namespace alora {

// Per-layer key/value rows (post-rotation keys, d_model wide) plus one tag
// per position recording its token and producer.
//
// Storage is a list of immutable blocks shared between forks followed by one
// mutable tail block owned by this cache. seal() freezes the tail so the
// whole current length becomes shareable. Forks alias sealed blocks and
// never copy rows.
class KvCache {
 public:
  KvCache(std::size_t n_layers, std::size_t d_model);
  explicit KvCache(const ModelConfig& config)
      : KvCache(config.n_layers, config.d_model) {}

  KvCache(KvCache&&) noexcept = default;
  KvCache& operator=(KvCache&&) noexcept = default;
  KvCache(const KvCache&) = delete;
  KvCache& operator=(const KvCache&) = delete;

  std::size_t n_layers() const { return n_layers_; }
  std::size_t d_model() const { return d_model_; }

  // Positions tagged so far (driven by layer 0).
  std::size_t length() const { return tags_.size(); }
  std::size_t layer_length(std::size_t layer) const;
  std::size_t sealed_length() const { return sealed_length_; }

  // Appends rows for positions [start_position, start_position + rows) at
  // one layer. Tags are recorded from layer 0 and ignored elsewhere (pass
  // an empty span). Throws ContractViolation when appending into the sealed
  // region or out of sequence.
  void append_rows(std::size_t layer, std::size_t start_position,
                   const Matrix<float>& keys, const Matrix<float>& values,
                   std::span<const PositionTag> tags);

  // Freezes every stored position. All layers must have equal length.
  void seal();

  // New cache whose first `length` positions alias this cache's sealed
  // storage. Throws ContractViolation when length > sealed_length().
  KvCache fork_shared(std::size_t length) const;

  std::span<const float> key_row(std::size_t layer, std::size_t position) const;
  std::span<const float> value_row(std::size_t layer,
                                   std::size_t position) const;
  const PositionTag& tag(std::size_t position) const { return tags_[position]; }
  std::vector<TokenId> token_ids() const;
  std::vector<Provenance> provenance() const;

  // Rows of `layer` in position order as contiguous chunks.
  std::vector<kernels::KvChunk<float>> chunks(std::size_t layer) const;

  // Positions whose rows this cache appended itself (not inherited by fork).
  std::size_t owned_positions() const { return owned_positions_; }
  std::size_t row_bytes() const {
    return n_layers_ * 2 * d_model_ * sizeof(float);
  }

  // Diagnostic naming the first layer whose length disagrees with layer 0.
  std::optional<std::string> integrity_error() const;
  void check_integrity() const;

  // Throws ContractViolation when an adapter-produced position is followed
  // by a position with a different producer.
  void check_provenance_monotone() const;

  // Identity and full size of every storage block this cache references,
  // for byte-accounting audits across fork trees.
  struct BlockInfo {
    const void* id;
    std::size_t positions;
  };
  std::vector<BlockInfo> blocks() const;

 private:
  struct Block {
    std::vector<std::vector<float>> keys;    // per layer, rows × d_model
    std::vector<std::vector<float>> values;  // per layer
    std::size_t rows(std::size_t layer, std::size_t d_model) const {
      return keys[layer].size() / d_model;
    }
  };
  struct SharedChunk {
    std::shared_ptr<const Block> block;
    std::size_t rows;  // view length; may be shorter than the block
  };

  const float* locate(std::size_t layer, std::size_t position,
                      bool values) const;

  std::size_t n_layers_;
  std::size_t d_model_;
  std::vector<SharedChunk> shared_;
  std::shared_ptr<Block> tail_;
  std::vector<PositionTag> tags_;
  std::size_t sealed_length_ = 0;
  std::size_t owned_positions_ = 0;
};

// Longest prefix whose rows `consumer` may reuse: Base rows are reusable by
// everyone, Adapter(a) rows only by Adapter(a).
std::size_t reusable_prefix(const KvCache& cache, const Provenance& consumer);

// Bytes held exclusively by this cache (aliased fork prefixes excluded).
std::size_t incremental_bytes(const KvCache& cache);

}  // namespace alora
