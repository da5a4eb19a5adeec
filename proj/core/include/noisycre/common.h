// Copyright 2026 The noisycre Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef NOISYCRE_COMMON_H_
#define NOISYCRE_COMMON_H_

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace noisycre {

using Vec = std::vector<double>;
using Rng = std::mt19937_64;

// Error hierarchy. Every failure raised by the library derives from Error so
// that the CLI can map it to a nonzero exit code with a readable message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class CapacityError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class NumericalError : public Error { using Error::Error; };
class IntegrityError : public Error { using Error::Error; };
class InvariantError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

// Derives an independent sub-seed from a base seed and a stream tag
// (splitmix64 finalizer). Used so that every random consumer gets its own
// generator and adding a consumer never perturbs the others.
uint64_t derive_seed(uint64_t base, uint64_t tag);
uint64_t derive_seed(uint64_t base, uint64_t tag, uint64_t index);

// Dense row-major matrix. Vector-kind inputs are 1 x dim matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(size_t rows, size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  static Matrix row_vector(std::span<const double> values);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
bool all_finite(std::span<const double> a);

// Median of a non-empty sample (mean of the two middle values for even n).
double median(std::vector<double> values);

}  // namespace noisycre

#endif  // NOISYCRE_COMMON_H_
