#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rstn/errors.hpp"
#include "rstn/tensor.hpp"

namespace rstn {

// Digit labels, [N,T] row-major.
using Labels = Tensor<std::int32_t>;

template <class T>
struct LossResult {
  T loss{};
  Tensor<T> grad;
};

template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [N,K] logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.raw() + i * k;
    T* dst = out.raw() + i * k;
    const T m = *std::max_element(row, row + k);
    T z{0};
    for (std::size_t j = 0; j < k; ++j) z += dst[j] = std::exp(row[j] - m);
    for (std::size_t j = 0; j < k; ++j) dst[j] /= z;
  }
  return out;
}

// Mean over the batch of -log softmax(logits)[label]; grad = (softmax - onehot)/N.
template <class T>
LossResult<T> softmax_xent(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_xent expects [N,K] logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  LossResult<T> r{T{0}, softmax(logits)};
  if (n == 0) return r;
  const T inv_n = T{1} / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw std::out_of_range("label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
    }
    const T* row = logits.raw() + i * k;
    const T m = *std::max_element(row, row + k);
    T z{0};
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    r.loss += (m + std::log(z) - row[y]) * inv_n;
    r.grad[i * k + static_cast<std::size_t>(y)] -= T{1};
    for (std::size_t j = 0; j < k; ++j) r.grad[i * k + j] *= inv_n;
  }
  return r;
}

// Per-position cross-entropy summed over T and averaged over N.
// logits [T,N,K], labels [N,T]; grad has the shape of logits.
template <class T>
LossResult<T> sequence_loss(const Tensor<T>& logits, const Labels& labels) {
  if (logits.rank() != 3 || labels.rank() != 2 || labels.dim(0) != logits.dim(1) || labels.dim(1) != logits.dim(0)) {
    throw ShapeError("sequence_loss: logits " + shape_str(logits.shape()) + " incompatible with labels " +
                     shape_str(labels.shape()));
  }
  const std::size_t steps = logits.dim(0), n = logits.dim(1), k = logits.dim(2);
  LossResult<T> r{T{0}, Tensor<T>(logits.shape())};
  std::vector<std::int32_t> step_labels(n);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor<T> step({n, k}, std::vector<T>(logits.raw() + t * n * k, logits.raw() + (t + 1) * n * k));
    for (std::size_t i = 0; i < n; ++i) step_labels[i] = labels(i, t);
    auto part = softmax_xent(step, step_labels);
    r.loss += part.loss;
    std::copy(part.grad.data().begin(), part.grad.data().end(), r.grad.raw() + t * n * k);
  }
  return r;
}

}  // namespace rstn
