// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "alora/error.hpp"

namespace alora::detail {
namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

void ContainerWriter::add(std::string name, const Matrix<float>& m) {
  entries_.push_back({std::move(name), {m.rows(), m.cols()}, m.data()});
}

void ContainerWriter::add(std::string name, const std::vector<float>& v) {
  entries_.push_back({std::move(name), {v.size()}, v.data()});
}

std::vector<std::uint8_t> ContainerWriter::finish(std::string_view magic,
                                                  std::uint16_t version,
                                                  nlohmann::json header) const {
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : entries_) {
    index.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    offset += product(e.shape) * sizeof(float);
  }
  header["tensors"] = std::move(index);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(magic.begin(), magic.end());
  put_u16(out, version);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& e : entries_) {
    const std::size_t n = product(e.shape);
    for (std::size_t i = 0; i < n; ++i) {
      put_u32(out, std::bit_cast<std::uint32_t>(e.data[i]));
    }
  }
  return out;
}

ContainerReader::ContainerReader(std::span<const std::uint8_t> bytes,
                                 std::string_view magic, std::uint16_t version)
    : bytes_(bytes) {
  if (bytes.size() < 4 ||
      std::memcmp(bytes.data(), magic.data(), magic.size()) != 0) {
    throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", 0);
  }
  if (bytes.size() < 6) throw FormatError("truncated version field", 4);
  const std::uint16_t found =
      static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (found != version) {
    throw FormatError("unsupported format version " + std::to_string(found),
                      4);
  }
  if (bytes.size() < 10) throw FormatError("truncated header length", 6);
  const std::size_t header_len = get_u32(bytes.data() + 6);
  if (bytes.size() < 10 + header_len) {
    throw FormatError("header extends past end of file", 10);
  }
  try {
    header_ = nlohmann::json::parse(bytes.begin() + 10,
                                    bytes.begin() + 10 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what(), 10);
  }
  const std::size_t data_start = 10 + header_len;
  if (!header_.contains("tensors") || !header_["tensors"].is_array()) {
    throw FormatError("header lacks a tensor index", 10);
  }
  try {
    for (const auto& t : header_["tensors"]) {
      Slot s;
      s.shape = t.at("shape").get<std::vector<std::size_t>>();
      s.offset = data_start + t.at("offset").get<std::size_t>();
      const std::size_t end = s.offset + product(s.shape) * sizeof(float);
      if (end > bytes.size()) {
        throw FormatError("tensor \"" + t.at("name").get<std::string>() +
                              "\" extends past end of file",
                          s.offset);
      }
      slots_.emplace_back(t.at("name").get<std::string>(), std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed tensor index: ") + e.what(), 10);
  }
}

bool ContainerReader::has(const std::string& name) const {
  for (const auto& [n, s] : slots_) {
    if (n == name) return true;
  }
  return false;
}

const ContainerReader::Slot& ContainerReader::slot(
    const std::string& name) const {
  for (const auto& [n, s] : slots_) {
    if (n == name) return s;
  }
  throw FormatError("missing tensor \"" + name + "\"", header_offset());
}

std::vector<float> ContainerReader::read(const Slot& s,
                                         std::size_t count) const {
  std::vector<float> out(count);
  const std::uint8_t* p = bytes_.data() + s.offset;
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  }
  return out;
}

Matrix<float> ContainerReader::matrix(const std::string& name,
                                      std::size_t rows,
                                      std::size_t cols) const {
  const Slot& s = slot(name);
  if (s.shape != std::vector<std::size_t>{rows, cols}) {
    throw FormatError("tensor \"" + name + "\" has unexpected shape",
                      s.offset);
  }
  Matrix<float> m(rows, cols);
  const auto data = read(s, rows * cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

std::vector<float> ContainerReader::vector(const std::string& name,
                                           std::size_t size) const {
  const Slot& s = slot(name);
  if (s.shape != std::vector<std::size_t>{size}) {
    throw FormatError("tensor \"" + name + "\" has unexpected shape",
                      s.offset);
  }
  return read(s, size);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace alora::detail
