// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian stream helpers shared by the FBNK and MLPC formats.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "cvarprobe/error.hpp"

namespace cvarprobe::detail {

class LeWriter {
 public:
  explicit LeWriter(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string() + " for writing");
  }

  void bytes(const char* data, std::size_t count) { out_.write(data, static_cast<std::streamsize>(count)); }
  void u8(std::uint8_t v) { put(v, 1); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void finish() {
    out_.flush();
    if (!out_) throw Error(ErrorCode::kIoFailure, "write failed for " + path_.string());
  }

 private:
  void put(std::uint64_t v, int width) {
    std::array<char, 8> buf{};
    for (int i = 0; i < width; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out_.write(buf.data(), width);
  }

  std::filesystem::path path_;
  std::ofstream out_;
};

class LeReader {
 public:
  explicit LeReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    std::error_code ec;
    if (!in_ || !std::filesystem::is_regular_file(path, ec)) {
      throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
    }
    size_ = std::filesystem::file_size(path, ec);
    if (ec) throw Error(ErrorCode::kIoFailure, "cannot stat " + path.string());
  }

  std::uint64_t offset() const noexcept { return offset_; }
  std::uint64_t file_size() const noexcept { return size_; }
  std::uint64_t remaining() const noexcept { return size_ - offset_; }

  void require(std::uint64_t count) const {
    if (remaining() < count) {
      throw Error(ErrorCode::kTruncatedFile,
                  "need " + std::to_string(count) + " bytes at byte offset " +
                      std::to_string(offset_) + ", file has " + std::to_string(size_));
    }
  }

  void bytes(char* data, std::size_t count) {
    require(count);
    in_.read(data, static_cast<std::streamsize>(count));
    if (!in_) throw Error(ErrorCode::kIoFailure, "read failed at byte offset " + std::to_string(offset_));
    offset_ += count;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

 private:
  std::uint64_t get(int width) {
    std::array<char, 8> buf{};
    bytes(buf.data(), static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    }
    return v;
  }

  std::ifstream in_;
  std::uint64_t size_ = 0;
  std::uint64_t offset_ = 0;
};

}  // namespace cvarprobe::detail
