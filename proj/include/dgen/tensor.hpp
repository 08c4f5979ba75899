#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace dgen {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
Vector<Scalar> sigmoid(const Vector<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
}

template <typename Scalar>
Vector<Scalar> tanh(const Vector<Scalar>& x) {
  return x.array().tanh().matrix();
}

/// Softmax restricted to positions where mask is true; masked entries are
/// exactly zero. Returns all zeros when nothing is unmasked.
template <typename Scalar>
Vector<Scalar> masked_softmax(const Vector<Scalar>& scores, const std::vector<bool>& mask) {
  const Eigen::Index n = scores.size();
  Vector<Scalar> out = Vector<Scalar>::Zero(n);
  Scalar best = -std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index i = 0; i < n; ++i)
    if (mask[static_cast<std::size_t>(i)]) best = std::max(best, scores(i));
  if (!std::isfinite(best)) return out;
  Scalar total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    out(i) = std::exp(scores(i) - best);
    total += out(i);
  }
  out /= total;
  return out;
}

template <typename Scalar>
Vector<Scalar> softmax(const Vector<Scalar>& logits) {
  Vector<Scalar> out = (logits.array() - logits.maxCoeff()).exp().matrix();
  out /= out.sum();
  return out;
}

template <typename Scalar>
Scalar log_sum_exp(const Vector<Scalar>& logits) {
  const Scalar m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum());
}

/// Inverted-dropout mask: entries are 0 or 1/(1-rate).
template <typename Scalar>
Matrix<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar scale = Scalar(1.0 / (1.0 - rate));
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = keep(rng) ? scale : Scalar(0);
  return m;
}

}  // namespace dgen
