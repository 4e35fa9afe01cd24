#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rstn/errors.hpp"
#include "rstn/tensor.hpp"

// Spatial transformer: a normalized sampling grid, an affine map of the grid
// into the source image, and bilinear sampling with gradients with respect to
// both the image and the six affine parameters.
//
// Coordinates are (y, x) pairs. Normalized (-1,-1) is the centre of pixel
// (0,0) and (+1,+1) the centre of pixel (H-1,W-1).

namespace rstn {

// theta laid out row-major as [[t0, t1, t2], [t3, t4, t5]]:
//   y' = t0*y + t1*x + t2,  x' = t3*y + t4*x + t5
template <class T>
struct AffineParams {
  std::array<T, 6> theta{};

  static constexpr AffineParams identity() { return {{T{1}, T{0}, T{0}, T{0}, T{1}, T{0}}}; }

  // Matrix product on augmented coordinates: (*this) after `inner`.
  AffineParams compose(const AffineParams& inner) const {
    const auto& a = theta;
    const auto& b = inner.theta;
    return {{a[0] * b[0] + a[1] * b[3], a[0] * b[1] + a[1] * b[4], a[0] * b[2] + a[1] * b[5] + a[2],
             a[3] * b[0] + a[4] * b[3], a[3] * b[1] + a[4] * b[4], a[3] * b[2] + a[4] * b[5] + a[5]}};
  }

  friend bool operator==(const AffineParams&, const AffineParams&) = default;
};

template <class T>
struct Point {
  T y{};
  T x{};
  friend bool operator==(const Point&, const Point&) = default;
};

// Equally spaced normalized target coordinates; ys has h entries, xs has w.
template <class T>
struct SamplingGrid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<T> ys;
  std::vector<T> xs;

  std::size_t size() const noexcept { return h * w; }
  Point<T> at(std::size_t i, std::size_t j) const { return {ys[i], xs[j]}; }
};

// Transformed grid points in normalized source coordinates, row-major [h,w].
template <class T>
struct SampleMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<Point<T>> points;

  const Point<T>& at(std::size_t i, std::size_t j) const { return points[i * w + j]; }
};

struct Extent {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t points() const noexcept { return h * w; }
  friend bool operator==(const Extent&, const Extent&) = default;
};

namespace detail {

template <class T>
std::vector<T> linspace_unit(std::size_t n) {
  std::vector<T> v(n, T{0});
  if (n == 1) return v;
  for (std::size_t i = 0; i < n; ++i) v[i] = T{-1} + T{2} * static_cast<T>(i) / static_cast<T>(n - 1);
  v.back() = T{1};
  return v;
}

}  // namespace detail

template <class T>
SamplingGrid<T> make_grid(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ShapeError("sampling grid extents must be positive");
  return {h, w, detail::linspace_unit<T>(h), detail::linspace_unit<T>(w)};
}

template <class T>
SampleMap<T> transform_grid(const AffineParams<T>& a, const SamplingGrid<T>& g) {
  const auto& t = a.theta;
  SampleMap<T> s{g.h, g.w, {}};
  s.points.reserve(g.size());
  for (std::size_t i = 0; i < g.h; ++i) {
    for (std::size_t j = 0; j < g.w; ++j) {
      const T y = g.ys[i], x = g.xs[j];
      s.points.push_back({t[0] * y + t[1] * x + t[2], t[3] * y + t[4] * x + t[5]});
    }
  }
  return s;
}

// Output extent for down-sampling factor d >= 1: (floor(H/d), floor(W/d)).
inline Extent output_extent(std::size_t height, std::size_t width, double d) {
  if (!(d >= 1.0)) throw std::invalid_argument("down-sampling factor must be >= 1, got " + std::to_string(d));
  const Extent e{static_cast<std::size_t>(std::floor(static_cast<double>(height) / d)),
                 static_cast<std::size_t>(std::floor(static_cast<double>(width) / d))};
  if (e.h == 0 || e.w == 0) throw std::invalid_argument("down-sampling factor leaves an empty output");
  return e;
}

namespace detail {

// Bilinear read of one normalized point from a [C,H,W] image into out[c*stride].
// Neighbours outside the image contribute zero.
template <class T>
void sample_point(const T* image, std::size_t channels, std::size_t height, std::size_t width, Point<T> p, T* out,
                  std::size_t stride) {
  const T py = (p.y + T{1}) / T{2} * static_cast<T>(height - 1);
  const T px = (p.x + T{1}) / T{2} * static_cast<T>(width - 1);
  const T fy = std::floor(py), fx = std::floor(px);
  const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
  for (std::size_t c = 0; c < channels; ++c) out[c * stride] = T{0};
  for (std::ptrdiff_t yk = y0; yk <= y0 + 1; ++yk) {
    if (yk < 0 || yk >= static_cast<std::ptrdiff_t>(height)) continue;
    const T wy = T{1} - std::abs(py - static_cast<T>(yk));
    for (std::ptrdiff_t xk = x0; xk <= x0 + 1; ++xk) {
      if (xk < 0 || xk >= static_cast<std::ptrdiff_t>(width)) continue;
      const T wx = T{1} - std::abs(px - static_cast<T>(xk));
      const std::size_t off = static_cast<std::size_t>(yk) * width + static_cast<std::size_t>(xk);
      for (std::size_t c = 0; c < channels; ++c) out[c * stride] += image[c * height * width + off] * (wy * wx);
    }
  }
}

// Adjoint of sample_point. grad_out[c*stride] is dL/d(output). Accumulates
// into grad_image and returns dL/d(normalized point).
template <class T>
Point<T> sample_point_backward(const T* image, std::size_t channels, std::size_t height, std::size_t width, Point<T> p,
                               const T* grad_out, std::size_t stride, T* grad_image) {
  const T py = (p.y + T{1}) / T{2} * static_cast<T>(height - 1);
  const T px = (p.x + T{1}) / T{2} * static_cast<T>(width - 1);
  const T fy = std::floor(py), fx = std::floor(px);
  const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
  T d_py{0}, d_px{0};
  for (std::ptrdiff_t yk = y0; yk <= y0 + 1; ++yk) {
    if (yk < 0 || yk >= static_cast<std::ptrdiff_t>(height)) continue;
    const T wy = T{1} - std::abs(py - static_cast<T>(yk));
    // d wy / d py on the piece [y0, y0+1): -1 for the lower neighbour, +1 for the upper.
    const T dwy = yk == y0 ? T{-1} : T{1};
    for (std::ptrdiff_t xk = x0; xk <= x0 + 1; ++xk) {
      if (xk < 0 || xk >= static_cast<std::ptrdiff_t>(width)) continue;
      const T wx = T{1} - std::abs(px - static_cast<T>(xk));
      const T dwx = xk == x0 ? T{-1} : T{1};
      const std::size_t off = static_cast<std::size_t>(yk) * width + static_cast<std::size_t>(xk);
      for (std::size_t c = 0; c < channels; ++c) {
        const T g = grad_out[c * stride];
        const T v = image[c * height * width + off];
        grad_image[c * height * width + off] += g * (wy * wx);
        d_py += g * v * dwy * wx;
        d_px += g * v * wy * dwx;
      }
    }
  }
  return {d_py * static_cast<T>(height - 1) / T{2}, d_px * static_cast<T>(width - 1) / T{2}};
}

}  // namespace detail

// Samples a [C,H,W] image at every point of S; result is [C,h,w].
template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& image, const SampleMap<T>& s) {
  if (image.rank() != 3) throw ShapeError("bilinear_sample expects a [C,H,W] image, got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), hh = image.dim(1), ww = image.dim(2), n = s.h * s.w;
  Tensor<T> out({c, s.h, s.w});
  for (std::size_t k = 0; k < n; ++k) detail::sample_point(image.raw(), c, hh, ww, s.points[k], out.raw() + k, n);
  return out;
}

template <class T>
struct SampleGradients {
  Tensor<T> image;
  std::vector<Point<T>> points;
};

template <class T>
SampleGradients<T> bilinear_sample_backward(const Tensor<T>& grad_out, const Tensor<T>& image, const SampleMap<T>& s) {
  if (image.rank() != 3 || grad_out.shape() != Shape{image.dim(0), s.h, s.w}) {
    throw ShapeError("bilinear_sample_backward: gradient " + shape_str(grad_out.shape()) + " incompatible with image " +
                     shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), hh = image.dim(1), ww = image.dim(2), n = s.h * s.w;
  SampleGradients<T> g{Tensor<T>(image.shape()), std::vector<Point<T>>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    g.points[k] = detail::sample_point_backward(image.raw(), c, hh, ww, s.points[k], grad_out.raw() + k, n, g.image.raw());
  }
  return g;
}

// Chain rule through S_ij = A (y_i, x_j, 1)^T.
template <class T>
AffineParams<T> affine_gradient(const std::vector<Point<T>>& grad_points, const SamplingGrid<T>& g) {
  AffineParams<T> out{};
  auto& t = out.theta;
  for (std::size_t i = 0; i < g.h; ++i) {
    for (std::size_t j = 0; j < g.w; ++j) {
      const auto& gp = grad_points[i * g.w + j];
      const T y = g.ys[i], x = g.xs[j];
      t[0] += gp.y * y;
      t[1] += gp.y * x;
      t[2] += gp.y;
      t[3] += gp.x * y;
      t[4] += gp.x * x;
      t[5] += gp.x;
    }
  }
  return out;
}

// Batched transformer layer. forward(images [N,C,H,W], theta [M,6]) with M a
// multiple of N; row m of theta drives a crop of image m % N, so a recurrent
// model can pass all T steps at once. Output is [M,C,h,w].
template <class T>
class SpatialTransformer {
 public:
  SpatialTransformer(std::size_t out_h, std::size_t out_w) : grid_(make_grid<T>(out_h, out_w)) {}

  static SpatialTransformer for_downsampling(std::size_t height, std::size_t width, double d) {
    const auto e = output_extent(height, width, d);
    return SpatialTransformer(e.h, e.w);
  }

  const SamplingGrid<T>& grid() const noexcept { return grid_; }
  Extent extent() const noexcept { return {grid_.h, grid_.w}; }

  Tensor<T> forward(const Tensor<T>& images, const Tensor<T>& theta) {
    check_inputs(images, theta);
    const std::size_t m = theta.dim(0), n = images.dim(0), c = images.dim(1);
    const std::size_t hh = images.dim(2), ww = images.dim(3), plane = c * hh * ww, pts = grid_.size();
    Tensor<T> out({m, c, grid_.h, grid_.w});
    for (std::size_t r = 0; r < m; ++r) {
      const auto s = transform_grid(row_params(theta, r), grid_);
      const T* img = images.raw() + (r % n) * plane;
      T* dst = out.raw() + r * c * pts;
      for (std::size_t k = 0; k < pts; ++k) detail::sample_point(img, c, hh, ww, s.points[k], dst + k, pts);
    }
    images_ = images;
    theta_ = theta;
    output_shape_ = out.shape();
    return out;
  }

  struct Gradients {
    Tensor<T> images;
    Tensor<T> theta;
  };

  Gradients backward(const Tensor<T>& grad_out) {
    if (!output_shape_) throw StateError("spatial transformer: backward called before forward");
    if (grad_out.shape() != *output_shape_) {
      throw ShapeError("spatial transformer: gradient shape " + shape_str(grad_out.shape()) + ", expected " +
                       shape_str(*output_shape_));
    }
    const std::size_t m = theta_.dim(0), n = images_.dim(0), c = images_.dim(1);
    const std::size_t hh = images_.dim(2), ww = images_.dim(3), plane = c * hh * ww, pts = grid_.size();
    Gradients g{Tensor<T>(images_.shape()), Tensor<T>(theta_.shape())};
    std::vector<Point<T>> grad_points(pts);
    for (std::size_t r = 0; r < m; ++r) {
      const auto s = transform_grid(row_params(theta_, r), grid_);
      const T* img = images_.raw() + (r % n) * plane;
      T* gimg = g.images.raw() + (r % n) * plane;
      const T* go = grad_out.raw() + r * c * pts;
      for (std::size_t k = 0; k < pts; ++k) {
        grad_points[k] = detail::sample_point_backward(img, c, hh, ww, s.points[k], go + k, pts, gimg);
      }
      const auto ga = affine_gradient(grad_points, grid_);
      std::copy(ga.theta.begin(), ga.theta.end(), g.theta.raw() + r * 6);
    }
    return g;
  }

  static AffineParams<T> row_params(const Tensor<T>& theta, std::size_t r) {
    AffineParams<T> a;
    std::copy(theta.raw() + r * 6, theta.raw() + r * 6 + 6, a.theta.begin());
    return a;
  }

 private:
  static void check_inputs(const Tensor<T>& images, const Tensor<T>& theta) {
    if (images.rank() != 4) throw ShapeError("spatial transformer expects [N,C,H,W] images, got " + shape_str(images.shape()));
    if (theta.rank() != 2 || theta.dim(1) != 6) throw ShapeError("spatial transformer expects [M,6] theta, got " + shape_str(theta.shape()));
    if (images.dim(0) == 0 || theta.dim(0) % images.dim(0) != 0) {
      throw ShapeError("theta rows " + std::to_string(theta.dim(0)) + " not a multiple of batch " +
                       std::to_string(images.dim(0)));
    }
  }

  SamplingGrid<T> grid_;
  Tensor<T> images_;
  Tensor<T> theta_;
  std::optional<Shape> output_shape_;
};

}  // namespace rstn
