// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/kv_cache.hpp"

#include <string>

#include "alora/error.hpp"

namespace alora {

KvCache::KvCache(std::size_t n_layers, std::size_t d_model)
    : n_layers_(n_layers), d_model_(d_model), tail_(std::make_shared<Block>()) {
  tail_->keys.resize(n_layers);
  tail_->values.resize(n_layers);
}

std::size_t KvCache::layer_length(std::size_t layer) const {
  if (layer >= n_layers_) {
    throw ContractViolation("layer " + std::to_string(layer) +
                            " out of range");
  }
  return sealed_length_ + tail_->rows(layer, d_model_);
}

void KvCache::append_rows(std::size_t layer, std::size_t start_position,
                          const Matrix<float>& keys,
                          const Matrix<float>& values,
                          std::span<const PositionTag> tags) {
  if (layer >= n_layers_) {
    throw ContractViolation("append to layer " + std::to_string(layer) +
                            " of a " + std::to_string(n_layers_) +
                            "-layer cache");
  }
  if (start_position < sealed_length_) {
    throw ContractViolation("append into sealed region at position " +
                            std::to_string(start_position) +
                            " (sealed length " +
                            std::to_string(sealed_length_) + ")");
  }
  if (start_position != layer_length(layer)) {
    throw ContractViolation("append at position " +
                            std::to_string(start_position) + " to layer " +
                            std::to_string(layer) + " holding " +
                            std::to_string(layer_length(layer)) + " rows");
  }
  if (keys.rows() != values.rows() ||
      (keys.rows() > 0 && (keys.cols() != d_model_ || values.cols() != d_model_))) {
    throw ContractViolation("key/value rows must be matching d_model-wide");
  }
  if (layer == 0 && tags.size() != keys.rows()) {
    throw ContractViolation("layer 0 append needs one tag per row");
  }
  if (keys.rows() == 0) return;
  auto& k = tail_->keys[layer];
  auto& v = tail_->values[layer];
  k.insert(k.end(), keys.data(), keys.data() + keys.size());
  v.insert(v.end(), values.data(), values.data() + values.size());
  if (layer == 0) {
    tags_.insert(tags_.end(), tags.begin(), tags.end());
    owned_positions_ += keys.rows();
  }
}

std::optional<std::string> KvCache::integrity_error() const {
  const std::size_t expected = layer_length(0);
  for (std::size_t l = 1; l < n_layers_; ++l) {
    if (layer_length(l) != expected) {
      return "layer " + std::to_string(l) + " holds " +
             std::to_string(layer_length(l)) + " rows, layer 0 holds " +
             std::to_string(expected);
    }
  }
  if (tags_.size() != expected) {
    return "provenance list holds " + std::to_string(tags_.size()) +
           " entries for " + std::to_string(expected) + " rows";
  }
  return std::nullopt;
}

void KvCache::check_integrity() const {
  if (auto err = integrity_error()) throw ContractViolation(*err);
}

void KvCache::check_provenance_monotone() const {
  for (std::size_t p = 1; p < tags_.size(); ++p) {
    const auto& prev = tags_[p - 1].producer;
    if (!prev.is_base() && tags_[p].producer != prev) {
      throw ContractViolation("position " + std::to_string(p) +
                              " produced by " + tags_[p].producer.to_string() +
                              " follows a position produced by " +
                              prev.to_string());
    }
  }
}

void KvCache::seal() {
  check_integrity();
  const std::size_t rows = tail_->rows(0, d_model_);
  if (rows == 0) return;
  shared_.push_back({tail_, rows});
  sealed_length_ += rows;
  tail_ = std::make_shared<Block>();
  tail_->keys.resize(n_layers_);
  tail_->values.resize(n_layers_);
}

KvCache KvCache::fork_shared(std::size_t length) const {
  if (length > sealed_length_) {
    throw ContractViolation("fork at " + std::to_string(length) +
                            " exceeds sealed length " +
                            std::to_string(sealed_length_));
  }
  KvCache child(n_layers_, d_model_);
  std::size_t remaining = length;
  for (const auto& chunk : shared_) {
    if (remaining == 0) break;
    const std::size_t take = std::min(remaining, chunk.rows);
    child.shared_.push_back({chunk.block, take});
    remaining -= take;
  }
  child.tags_.assign(tags_.begin(), tags_.begin() + length);
  child.sealed_length_ = length;
  return child;
}

const float* KvCache::locate(std::size_t layer, std::size_t position,
                             bool values) const {
  if (layer >= n_layers_ || position >= layer_length(layer)) {
    throw ContractViolation("no row at layer " + std::to_string(layer) +
                            ", position " + std::to_string(position));
  }
  std::size_t base = 0;
  for (const auto& chunk : shared_) {
    if (position < base + chunk.rows) {
      const auto& store = values ? chunk.block->values : chunk.block->keys;
      return store[layer].data() + (position - base) * d_model_;
    }
    base += chunk.rows;
  }
  const auto& store = values ? tail_->values : tail_->keys;
  return store[layer].data() + (position - base) * d_model_;
}

std::span<const float> KvCache::key_row(std::size_t layer,
                                        std::size_t position) const {
  return {locate(layer, position, false), d_model_};
}

std::span<const float> KvCache::value_row(std::size_t layer,
                                          std::size_t position) const {
  return {locate(layer, position, true), d_model_};
}

std::vector<TokenId> KvCache::token_ids() const {
  std::vector<TokenId> out;
  out.reserve(tags_.size());
  for (const auto& t : tags_) out.push_back(t.token);
  return out;
}

std::vector<Provenance> KvCache::provenance() const {
  std::vector<Provenance> out;
  out.reserve(tags_.size());
  for (const auto& t : tags_) out.push_back(t.producer);
  return out;
}

std::vector<kernels::KvChunk<float>> KvCache::chunks(std::size_t layer) const {
  std::vector<kernels::KvChunk<float>> out;
  out.reserve(shared_.size() + 1);
  for (const auto& chunk : shared_) {
    out.push_back({chunk.block->keys[layer].data(),
                   chunk.block->values[layer].data(), chunk.rows});
  }
  const std::size_t tail_rows = tail_->rows(layer, d_model_);
  if (tail_rows > 0) {
    out.push_back({tail_->keys[layer].data(), tail_->values[layer].data(),
                   tail_rows});
  }
  return out;
}

std::vector<KvCache::BlockInfo> KvCache::blocks() const {
  std::vector<BlockInfo> out;
  for (const auto& chunk : shared_) {
    out.push_back({chunk.block.get(), chunk.block->rows(0, d_model_)});
  }
  if (tail_->rows(0, d_model_) > 0) {
    out.push_back({tail_.get(), tail_->rows(0, d_model_)});
  }
  return out;
}

std::size_t reusable_prefix(const KvCache& cache, const Provenance& consumer) {
  std::size_t n = 0;
  while (n < cache.length()) {
    const auto& producer = cache.tag(n).producer;
    if (!producer.is_base() && producer != consumer) break;
    ++n;
  }
  return n;
}

std::size_t incremental_bytes(const KvCache& cache) {
  return cache.owned_positions() * cache.row_bytes();
}

}  // namespace alora
