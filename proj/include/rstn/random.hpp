#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/QR>

#include "rstn/tensor.hpp"

namespace rstn {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent child streams from a
// master seed so that results do not depend on evaluation order.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(seed ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

template <class T>
void fill_uniform(Tensor<T>& t, T lo, T hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <class T>
void fill_normal(Tensor<T>& t, T mean, T stddev, Rng& rng) {
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <class T>
Tensor<T> random_uniform(Shape shape, T lo, T hi, Rng& rng) {
  Tensor<T> t(std::move(shape));
  fill_uniform(t, lo, hi, rng);
  return t;
}

// U(-gain/sqrt(fan_in), gain/sqrt(fan_in)).
template <class T>
void init_fan_in(Tensor<T>& t, std::size_t fan_in, Rng& rng, double gain = 1.0) {
  const T bound = static_cast<T>(gain / std::sqrt(static_cast<double>(fan_in)));
  fill_uniform(t, -bound, bound, rng);
}

// Square orthogonal matrix from the QR decomposition of a Gaussian matrix,
// with the sign of R's diagonal folded in so the result is Haar-distributed.
template <class T>
void init_orthogonal(Tensor<T>& t, Rng& rng) {
  if (t.rank() != 2 || t.dim(0) != t.dim(1)) throw ShapeError("orthogonal init needs a square matrix");
  const auto n = static_cast<Eigen::Index>(t.dim(0));
  Eigen::MatrixXd g(n, n);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = dist(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) t(i, j) = static_cast<T>(q(i, j));
}

}  // namespace rstn
