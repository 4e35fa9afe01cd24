#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rstn/errors.hpp"

namespace rstn {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// Eigen's GEMM kernels peel differently depending on pointer alignment, which
// changes summation order. Fixed 64-byte alignment keeps results bitwise
// reproducible across allocations.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// Dense row-major n-dimensional array. Images are [C,H,W]; batches prepend N.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                       " values");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  Shape strides() const {
    Shape s(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
    return s;
  }

  template <class... I>
  std::size_t offset(I... idx) const {
    static_assert((std::is_integral_v<I> && ...));
    if (sizeof...(I) != shape_.size()) {
      throw ShapeError("index rank " + std::to_string(sizeof...(I)) + " for tensor " + shape_str(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    ((off = off * shape_[axis++] + static_cast<std::size_t>(idx)), ...);
    return off;
  }

  template <class... I>
  T& operator()(I... idx) { return data_[offset(idx...)]; }
  template <class... I>
  const T& operator()(I... idx) const { return data_[offset(idx...)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
  }
  Tensor reshaped(Shape shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    } else {
      return true;
    }
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

template <class T>
void check_finite(const Tensor<T>& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite value in " + what);
}

template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.size());
  std::transform(t.data().begin(), t.data().end(), out.begin(), [](From v) { return static_cast<To>(v); });
  return Tensor<To>(t.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Binary ops require identical shapes; the only
// broadcast is a scalar right-hand side.

enum class BinaryOp { add, sub, mul };
enum class UnaryOp { sigmoid, tanh, relu };

namespace detail {

template <class T>
T apply_binary(BinaryOp op, T a, T b) {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::mul: return a * b;
  }
  return T{};
}

template <class T>
T apply_unary(UnaryOp op, T v) {
  switch (op) {
    case UnaryOp::sigmoid: return T{1} / (T{1} + std::exp(-v));
    case UnaryOp::tanh: return std::tanh(v);
    case UnaryOp::relu: return v > T{0} ? v : T{0};
  }
  return T{};
}

}  // namespace detail

template <class T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply_binary(op, a[i], b[i]);
  return out;
}

template <class T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, T scalar) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply_binary(op, a[i], scalar);
  return out;
}

template <class T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply_unary(op, a[i]);
  return out;
}

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }
template <class T> Tensor<T> scale(const Tensor<T>& a, T s) { return elementwise(BinaryOp::mul, a, s); }
template <class T> Tensor<T> sigmoid(const Tensor<T>& a) { return elementwise(UnaryOp::sigmoid, a); }
template <class T> Tensor<T> tanh(const Tensor<T>& a) { return elementwise(UnaryOp::tanh, a); }
template <class T> Tensor<T> relu(const Tensor<T>& a) { return elementwise(UnaryOp::relu, a); }

// In-place accumulation used by the layers: dst += src.
template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.shape() != src.shape()) {
    throw ShapeError("accumulate shape mismatch: " + shape_str(dst.shape()) + " vs " + shape_str(src.shape()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// ---------------------------------------------------------------------------
// Matrix products. Row-major raw-pointer GEMM shared by matmul, dense,
// convolution (im2col) and the GRU.

// C[m,n] = beta*C + A'[m,k] * B'[k,n], where A' = A or A^T (A stored [k,m])
// and likewise for B.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T beta,
          T* c) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  Eigen::Map<Mat> cm(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);
  if (beta == T{0}) cm.setZero();
  else if (beta != T{1}) cm *= beta;
  if (k == 0) return;
  if (!trans_a && !trans_b) cm.noalias() += CMap(a, em, ek) * CMap(b, ek, en);
  else if (!trans_a && trans_b) cm.noalias() += CMap(a, em, ek) * CMap(b, en, ek).transpose();
  else if (trans_a && !trans_b) cm.noalias() += CMap(a, ek, em).transpose() * CMap(b, ek, en);
  else cm.noalias() += CMap(a, ek, em).transpose() * CMap(b, en, ek).transpose();
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.raw(), b.raw(), T{0}, out.raw());
  return out;
}

// ---------------------------------------------------------------------------
// Reductions along one axis; the reduced axis is dropped from the shape.

enum class ReduceOp { sum, max };

namespace detail {

struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("reduction axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline Shape drop_axis(Shape shape, std::size_t axis) {
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return shape;
}

}  // namespace detail

template <class T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& t, std::size_t axis) {
  const auto s = detail::split_axis(t.shape(), axis);
  if (op == ReduceOp::max && s.extent == 0) throw ShapeError("max over an empty axis");
  Tensor<T> out(detail::drop_axis(t.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const T* p = t.raw() + o * s.extent * s.inner + i;
      T acc = op == ReduceOp::sum ? T{0} : p[0];
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = p[e * s.inner];
        acc = op == ReduceOp::sum ? acc + v : std::max(acc, v);
      }
      out[o * s.inner + i] = acc;
    }
  }
  return out;
}

template <class T>
Tensor<T> reduce_sum(const Tensor<T>& t, std::size_t axis) { return reduce(ReduceOp::sum, t, axis); }
template <class T>
Tensor<T> reduce_max(const Tensor<T>& t, std::size_t axis) { return reduce(ReduceOp::max, t, axis); }

// Index of the maximum along `axis`; ties go to the first index.
template <class T>
Tensor<std::int64_t> argmax(const Tensor<T>& t, std::size_t axis) {
  const auto s = detail::split_axis(t.shape(), axis);
  if (s.extent == 0) throw ShapeError("argmax over an empty axis");
  Tensor<std::int64_t> out(detail::drop_axis(t.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const T* p = t.raw() + o * s.extent * s.inner + i;
      std::size_t best = 0;
      for (std::size_t e = 1; e < s.extent; ++e) {
        if (p[e * s.inner] > p[best * s.inner]) best = e;
      }
      out[o * s.inner + i] = static_cast<std::int64_t>(best);
    }
  }
  return out;
}

template <class T>
T sum(const Tensor<T>& t) {
  T acc{0};
  for (const T v : t.data()) acc += v;
  return acc;
}

}  // namespace rstn
