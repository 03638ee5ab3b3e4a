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

#ifndef GRASP_COMMON_H_
#define GRASP_COMMON_H_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace grasp {

// All learnable math runs in double precision; files store 32-bit floats.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vec = Eigen::VectorXd;

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

// Error hierarchy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller-supplied argument or configuration (exit code 2).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed input file, failed parse, inconsistent data (exit code 3).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Data is well formed but unusable, e.g. empty after filtering (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or other numeric breakdown (exit code 4).
class NumericError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x51ed270b27a1c3d5ULL));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t sub) {
  return derive_seed(derive_seed(seed, stream), sub);
}

// Uniform integer in [0, n) drawn directly from the engine so that the
// sequence is identical across standard library implementations.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

// Uniform real in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller; one draw per call keeps streams simple.
inline double standard_normal(Rng& rng) {
  double u1;
  do {
    u1 = uniform_unit(rng);
  } while (u1 <= 0.0);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace grasp

#endif  // GRASP_COMMON_H_
