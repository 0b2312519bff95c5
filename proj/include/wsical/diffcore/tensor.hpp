#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace wsical::ad {

/// Raised when operand shapes are incompatible; the message names the op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or Inf is fed into a computation.
class NonFiniteError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

/// Dense row-major tensor. Arithmetic ops work on rank <= 2 where a rank-1
/// tensor of length n behaves as a 1 x n row.
template <typename T>
struct Tensor {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Matrix>;
  using ConstMap = Eigen::Map<const Matrix>;

  // Eigen picks its vectorised code path from the buffer address; a fixed
  // alignment keeps results bit-identical from run to run.
  using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

  Shape shape;
  Storage data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0})
      : shape(std::move(s)), data(element_count(shape), fill) {}
  Tensor(Shape s, const std::vector<T>& values) : shape(std::move(s)), data(values.begin(), values.end()) {
    check_count();
  }
  Tensor(Shape s, Storage values) : shape(std::move(s)), data(std::move(values)) { check_count(); }
  Tensor(Shape s, std::initializer_list<T> values) : shape(std::move(s)), data(values) { check_count(); }

  void check_count() const {
    if (element_count(shape) != data.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T{0}) {
    return Tensor(Shape{rows, cols}, fill);
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  std::size_t rows() const {
    require_matrix();
    return shape.size() == 2 ? shape[0] : 1;
  }
  std::size_t cols() const {
    require_matrix();
    if (shape.empty()) return 1;
    return shape.back();
  }

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  Map map() { return Map(data.data(), rows(), cols()); }
  ConstMap map() const { return ConstMap(data.data(), rows(), cols()); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  void require_matrix() const {
    if (shape.size() > 2) {
      throw ShapeError("tensor: rank " + std::to_string(shape.size()) +
                       " tensor used where a matrix is required");
    }
  }
};

}  // namespace wsical::ad
