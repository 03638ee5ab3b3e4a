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

#include "grasp/binary_io.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace grasp::io {

void ByteWriter::write_file(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw IoError("write failed: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("cannot rename into place: " + path);
  }
}

ByteReader ByteReader::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return ByteReader(std::move(bytes), path);
}

void ByteReader::fail(const std::string& what) const {
  throw FormatError(source_ + ": " + what + " at byte offset " + std::to_string(pos_));
}

void ByteReader::expect_magic(std::string_view m) {
  if (remaining() < m.size()) fail("truncated header");
  if (std::string_view(bytes_.data() + pos_, m.size()) != m) {
    fail("bad magic (expected '" + std::string(m) + "')");
  }
  pos_ += m.size();
}

std::uint64_t ByteReader::get_le(int n) {
  if (remaining() < static_cast<std::size_t>(n)) fail("unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
  }
  pos_ += n;
  return v;
}

void ByteReader::tensor(Mat& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float v = f32();
    if (!std::isfinite(v)) {
      pos_ -= 4;
      fail("non-finite value");
    }
    m.data()[i] = v;
  }
}

void ByteReader::expect_end() const {
  if (remaining() != 0) {
    throw FormatError(source_ + ": " + std::to_string(remaining()) +
                      " trailing bytes at byte offset " + std::to_string(pos_));
  }
}

}  // namespace grasp::io
