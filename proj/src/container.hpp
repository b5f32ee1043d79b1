// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

// Shared layout of checkpoint and adapter files:
//   magic[4] | u16 LE version | u32 LE header length | JSON header | f32 LE data
// The header's "tensors" array lists {name, shape, offset} with offsets
// relative to the start of the data section.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "alora/tensor.hpp"

namespace alora::detail {

struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  const float* data;
};

class ContainerWriter {
 public:
  void add(std::string name, const Matrix<float>& m);
  void add(std::string name, const std::vector<float>& v);
  std::vector<std::uint8_t> finish(std::string_view magic,
                                   std::uint16_t version,
                                   nlohmann::json header) const;

 private:
  std::vector<TensorEntry> entries_;
};

class ContainerReader {
 public:
  // Validates magic, version, header, and the tensor index. Throws
  // FormatError carrying the offending byte offset.
  ContainerReader(std::span<const std::uint8_t> bytes, std::string_view magic,
                  std::uint16_t version);

  const nlohmann::json& header() const { return header_; }
  Matrix<float> matrix(const std::string& name, std::size_t rows,
                       std::size_t cols) const;
  std::vector<float> vector(const std::string& name, std::size_t size) const;
  bool has(const std::string& name) const;
  std::size_t header_offset() const { return 10; }

 private:
  struct Slot {
    std::vector<std::size_t> shape;
    std::size_t offset;  // absolute
  };
  const Slot& slot(const std::string& name) const;
  std::vector<float> read(const Slot& s, std::size_t count) const;

  std::span<const std::uint8_t> bytes_;
  nlohmann::json header_;
  std::vector<std::pair<std::string, Slot>> slots_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);

}  // namespace alora::detail
