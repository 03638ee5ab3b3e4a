/*
 * Copyright 2026 The GRASP Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Little-endian primitive readers/writers shared by the binary file formats.

#ifndef GRASP_BINARY_IO_H_
#define GRASP_BINARY_IO_H_

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "grasp/common.h"

namespace grasp::io {

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  // Writes every entry of a row-major matrix as f32.
  void tensor(const Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) f32(static_cast<float>(m.data()[i]));
  }

  const std::vector<char>& bytes() const { return bytes_; }
  // Writes to a temporary sibling and renames, so readers never see a
  // partially written file.
  void write_file(const std::string& path) const;

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  // Reads the whole file; throws IoError if it cannot be opened.
  static ByteReader from_file(const std::string& path);
  explicit ByteReader(std::vector<char> bytes, std::string source = "<memory>")
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  void expect_magic(std::string_view m);
  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  // Fills m (already shaped) from consecutive f32 values; rejects NaN/Inf.
  void tensor(Mat& m);

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& source() const { return source_; }
  // Throws FormatError if trailing bytes remain.
  void expect_end() const;
  [[noreturn]] void fail(const std::string& what) const;

 private:
  std::uint64_t get_le(int n);
  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace grasp::io

#endif  // GRASP_BINARY_IO_H_
