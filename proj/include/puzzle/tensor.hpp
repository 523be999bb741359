#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "puzzle/error.hpp"

namespace puzzle {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Extents are positive; a default-constructed
/// tensor is empty and has rank 0.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw UsageError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw UsageError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  /// Rows [begin, end) of a rank-2 tensor.
  Tensor rows(std::size_t begin, std::size_t end) const {
    if (rank() != 2 || begin > end || end > shape_[0]) {
      throw UsageError("row slice out of range");
    }
    const std::size_t cols = shape_[1];
    return Tensor({end - begin, cols},
                  std::vector<T>(data_.begin() + begin * cols, data_.begin() + end * cols));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Views a tensor's storage as a rows x cols row-major matrix.
template <typename T>
MatrixMap<T> as_matrix(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatrixMap<T>(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
ConstMatrixMap<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap<T>(t.ptr(), static_cast<Eigen::Index>(rows),
                           static_cast<Eigen::Index>(cols));
}

/// Keeps large tensor buffers on the heap instead of fresh mmap'd pages;
/// per-pair forward/backward passes otherwise spend most of their time in
/// page faults.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace puzzle
