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

#ifndef GRASP_TESTS_TEST_UTIL_H_
#define GRASP_TESTS_TEST_UTIL_H_

#include <unistd.h>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "grasp/embedstore.h"
#include "grasp/hae.h"

namespace grasp::testing {

inline EmbeddingMatrix matrix(std::size_t rows, std::size_t dim, std::vector<float> values) {
  return EmbeddingMatrix(rows, dim, std::move(values));
}

inline EmbeddingMatrix random_matrix(std::size_t rows, std::size_t dim, Rng& rng) {
  std::vector<float> v(rows * dim);
  for (auto& x : v) x = static_cast<float>(standard_normal(rng));
  return EmbeddingMatrix(rows, dim, std::move(v));
}

inline std::shared_ptr<const SemanticStores> make_stores(const EmbeddingMatrix& users,
                                                         const EmbeddingMatrix& items,
                                                         std::size_t k) {
  auto s = std::make_shared<SemanticStores>();
  s->users = SemanticTable(std::make_shared<EmbeddingMatrix>(users),
                           std::make_shared<NeighborCache>(build_neighbor_cache(users, k)));
  s->items = SemanticTable(std::make_shared<EmbeddingMatrix>(items),
                           std::make_shared<NeighborCache>(build_neighbor_cache(items, k)));
  return s;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("grasp_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

}  // namespace grasp::testing

#endif  // GRASP_TESTS_TEST_UTIL_H_
