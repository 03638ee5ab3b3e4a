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

#ifndef GRASP_PARALLEL_H_
#define GRASP_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace grasp {

// Worker count: GRASP_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous static blocks, so
// any output written by index is independent of the thread count. The first
// exception thrown by a worker is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace grasp

#endif  // GRASP_PARALLEL_H_
