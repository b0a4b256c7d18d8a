#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gcanet/error.hpp"

namespace gcanet {

/// Extent of a rank-4 tensor. Elements are laid out batch-major, then
/// channel, then row, then column (NCHW, column index fastest).
struct Shape {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  constexpr std::int64_t numel() const { return n * c * h * w; }
  constexpr std::int64_t plane() const { return h * w; }
  constexpr std::int64_t operator[](int axis) const {
    return axis == 0 ? n : axis == 1 ? c : axis == 2 ? h : w;
  }
  constexpr bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
  }
};

/// Dense value-semantic NCHW tensor.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape) {
    check_shape(shape);
    data_.assign(static_cast<std::size_t>(shape.numel()), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    check_shape(shape);
    if (data_.size() != static_cast<std::size_t>(shape.numel())) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape.str());
    }
  }

  static Tensor matrix(std::int64_t rows, std::int64_t cols, std::vector<T> data) {
    return Tensor(Shape{1, 1, rows, cols}, std::move(data));
  }
  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w);
  }
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) { return data_[index(n, c, h, w)]; }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[index(n, c, h, w)];
  }

  T* plane(std::int64_t n, std::int64_t c) { return data_.data() + index(n, c, 0, 0); }
  const T* plane(std::int64_t n, std::int64_t c) const { return data_.data() + index(n, c, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new extent; element count must match.
  Tensor reshaped(Shape s) const {
    if (s.numel() != shape_.numel()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    }
    Tensor out;
    out.shape_ = s;
    out.data_ = data_;
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor& operator+=(const Tensor& other) {
    if (other.shape_ != shape_) {
      throw ShapeError("accumulate shape mismatch " + shape_.str() + " vs " + other.shape_.str());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

 private:
  static void check_shape(const Shape& s) {
    if (!s.valid()) throw ShapeError("tensor dimensions must be >= 1, got " + s.str());
  }

  Shape shape_{};
  std::vector<T> data_;
};

}  // namespace gcanet
