/* Copyright 2026 The traitnet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Parameter checkpoint file.
//
// Layout (all integers little-endian):
//
//   magic      8 bytes  "TRAITNET"
//   version    u32      kCheckpointVersion
//   meta_len   u32      length of the metadata JSON text
//   meta       bytes    UTF-8 JSON object (model config, normalization, ...)
//   count      u64      number of records
//   record * count:
//     name_len u32, name bytes,
//     ndim     u32, dims i64 * ndim,
//     data     f64 * prod(dims), IEEE-754 binary64, little-endian
//   checksum   u64      FNV-1a over every preceding byte

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "traitnet/errors.hpp"
#include "traitnet/tensor.hpp"

namespace traitnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "TRAITNET";

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(std::string_view name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }
};

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(const char* what) { return get(8, what); }
  std::int64_t i64(const char* what) { return static_cast<std::int64_t>(get(8, what)); }
  double f64(const char* what) { return std::bit_cast<double>(get(8, what)); }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  [[noreturn]] void fail(const std::string& reason) const {
    throw ParseError(source_, reason + " (at byte " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) fail(std::string("truncated while reading ") + what);
  }
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const std::string meta = ckpt.metadata.dump();
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta);
  w.u64(ckpt.records.size());
  for (const auto& r : ckpt.records) {
    TRAITNET_CHECK_DIM(static_cast<std::int64_t>(r.data.size()) == numel_of(r.shape), "checkpoint",
                   r.name, "record data does not match shape " + shape_str(r.shape));
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) w.i64(d);
    for (double v : r.data) w.f64(v);
  }
  w.u64(fnv1a64(w.str()));
  return std::move(w.str());
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  if (r.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic) r.fail("bad magic, not a checkpoint file");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  if (bytes.size() < 8) r.fail("missing checksum");
  const auto meta_len = r.u32("metadata length");
  Checkpoint ckpt;
  const auto meta = r.bytes(meta_len, "metadata");
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("metadata is not valid JSON: ") + e.what());
  }
  const auto count = r.u64("record count");
  // Every record needs at least 16 bytes; reject counts the file cannot hold.
  if (count > r.remaining() / 16) r.fail("record count " + std::to_string(count) + " exceeds file size");
  ckpt.records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const auto name_len = r.u32("record name length");
    rec.name = std::string(r.bytes(name_len, "record name"));
    const auto ndim = r.u32("record rank");
    if (ndim > 8) r.fail("record '" + rec.name + "' has implausible rank " + std::to_string(ndim));
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = r.i64("record dims");
      if (dim < 0) r.fail("record '" + rec.name + "' has negative dimension");
      rec.shape.push_back(dim);
      n *= static_cast<std::uint64_t>(dim);
      if (n > r.remaining() / 8 + 1) r.fail("record '" + rec.name + "' is larger than the file");
    }
    if (n * 8 > r.remaining()) r.fail("truncated while reading data of record '" + rec.name + "'");
    rec.data.resize(n);
    for (auto& v : rec.data) v = r.f64("record data");
    ckpt.records.push_back(std::move(rec));
  }
  const std::size_t body_end = r.pos();
  const auto stored = r.u64("checksum");
  if (r.remaining() != 0) r.fail("trailing bytes after checksum");
  if (stored != fnv1a64(bytes.substr(0, body_end))) r.fail("checksum mismatch, file is corrupt");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), "cannot open checkpoint");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace traitnet
