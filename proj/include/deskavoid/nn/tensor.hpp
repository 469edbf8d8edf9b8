#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <new>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deskavoid/common.hpp"

namespace deskavoid::nn {

template <class T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::size_t shape_size(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + ")";
}

/// 64-byte aligned storage. Eigen peels vectorized loops by pointer alignment, so unaligned
/// buffers make float results depend on where malloc put them.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + kAlign - 1) / kAlign * kAlign;
    void* p = std::aligned_alloc(kAlign, std::max<std::size_t>(bytes, kAlign));
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) { std::free(p); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Row-major tensor. Batched activations carry the batch as the leading dimension.
template <class T>
struct BasicTensor {
  using Scalar = T;
  using MatMap = Eigen::Map<MatrixRM<T>>;
  using ConstMatMap = Eigen::Map<const MatrixRM<T>>;

  std::vector<int> shape;
  AlignedVector<T> data;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
  BasicTensor(std::vector<int> s, AlignedVector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_size(shape)) {
      throw ValidationError("tensor data length does not match shape " + shape_string(shape));
    }
  }
  BasicTensor(std::vector<int> s, std::initializer_list<T> values)
      : BasicTensor(std::move(s), AlignedVector<T>(values)) {}
  BasicTensor(std::vector<int> s, const std::vector<T>& values)
      : shape(std::move(s)), data(values.begin(), values.end()) {
    if (data.size() != shape_size(shape)) {
      throw ValidationError("tensor data length does not match shape " + shape_string(shape));
    }
  }

  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] int batch() const { return shape.empty() ? 0 : shape[0]; }
  /// Elements per batch entry.
  [[nodiscard]] std::size_t sample_size() const { return shape.empty() ? 0 : data.size() / shape[0]; }

  /// View as a (rows x cols) row-major matrix; rows*cols must equal size().
  MatMap matrix(int rows, int cols) { return MatMap(data.data(), rows, cols); }
  [[nodiscard]] ConstMatMap matrix(int rows, int cols) const { return ConstMatMap(data.data(), rows, cols); }
  /// (batch x features) view.
  MatMap rows() { return matrix(batch(), static_cast<int>(sample_size())); }
  [[nodiscard]] ConstMatMap rows() const { return matrix(batch(), static_cast<int>(sample_size())); }

  [[nodiscard]] bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

  template <class U>
  [[nodiscard]] BasicTensor<U> cast() const {
    BasicTensor<U> out(shape);
    std::copy(data.begin(), data.end(), out.data.begin());
    return out;
  }
};

using Tensor = BasicTensor<float>;

/// Stacks flat samples into a batch.
inline Tensor stack_rows(std::span<const std::vector<float>> samples, std::vector<int> sample_shape) {
  std::vector<int> shape{static_cast<int>(samples.size())};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Tensor t(shape);
  const std::size_t n = shape_size(sample_shape);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != n) throw ValidationError("stack_rows: sample size mismatch");
    std::copy(samples[i].begin(), samples[i].end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return t;
}

}  // namespace deskavoid::nn
