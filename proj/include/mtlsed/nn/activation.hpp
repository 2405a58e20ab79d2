#pragma once

#include <algorithm>
#include <cmath>

#include "mtlsed/tensor.hpp"

namespace mtlsed::nn {

inline constexpr double kLeakySlope = 0.01;

template <typename Real>
Tensor<Real> leaky_relu_forward(const Tensor<Real>& x, double slope = kLeakySlope) {
  Tensor<Real> y(x.shape());
  const auto a = static_cast<Real>(slope);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] >= 0 ? x[i] : a * x[i];
  return y;
}

/// Gradient w.r.t. the input; the kink at 0 takes the positive branch.
template <typename Real>
Tensor<Real> leaky_relu_backward(const Tensor<Real>& x, const Tensor<Real>& grad_out,
                                 double slope = kLeakySlope) {
  require_shape(grad_out, x.shape(), "leaky_relu upstream gradient");
  Tensor<Real> dx(x.shape());
  const auto a = static_cast<Real>(slope);
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] >= 0 ? grad_out[i] : a * grad_out[i];
  return dx;
}

template <typename Real>
Real sigmoid(Real x) {
  // Split by sign so exp never overflows.
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

template <typename Real>
Tensor<Real> sigmoid_forward(const Tensor<Real>& x) {
  Tensor<Real> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

/// Takes the forward output s, since ds/dx = s (1 - s).
template <typename Real>
Tensor<Real> sigmoid_backward(const Tensor<Real>& s, const Tensor<Real>& grad_out) {
  require_shape(grad_out, s.shape(), "sigmoid upstream gradient");
  Tensor<Real> dx(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) dx[i] = grad_out[i] * s[i] * (Real(1) - s[i]);
  return dx;
}

/// Softmax over the last axis.
template <typename Real>
Tensor<Real> softmax_forward(const Tensor<Real>& x) {
  if (x.rank() == 0 || x.empty()) throw ShapeError("softmax: empty input");
  const std::size_t width = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / width;
  Tensor<Real> p(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = x.data() + r * width;
    Real* out = p.data() + r * width;
    const Real hi = *std::max_element(in, in + width);
    Real sum = 0;
    for (std::size_t i = 0; i < width; ++i) {
      out[i] = std::exp(in[i] - hi);
      sum += out[i];
    }
    for (std::size_t i = 0; i < width; ++i) out[i] /= sum;
  }
  return p;
}

template <typename Real>
Tensor<Real> softmax_backward(const Tensor<Real>& p, const Tensor<Real>& grad_out) {
  require_shape(grad_out, p.shape(), "softmax upstream gradient");
  const std::size_t width = p.dim(p.rank() - 1);
  const std::size_t rows = p.size() / width;
  Tensor<Real> dx(p.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * width;
    Real dot = 0;
    for (std::size_t i = 0; i < width; ++i) dot += grad_out[off + i] * p[off + i];
    for (std::size_t i = 0; i < width; ++i) dx[off + i] = p[off + i] * (grad_out[off + i] - dot);
  }
  return dx;
}

}  // namespace mtlsed::nn
