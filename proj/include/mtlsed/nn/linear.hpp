#pragma once

#include "mtlsed/tensor.hpp"

namespace mtlsed::nn {

template <typename Real>
struct LinearGrads {
  Tensor<Real> input;
  Tensor<Real> weight;
  Tensor<Real> bias;
};

/// y = x W^T + b with x (rows, in), W (out, in), b (out).
template <typename Real>
Tensor<Real> linear_forward(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  if (weight.dim(1) != x.dim(1)) {
    throw ShapeError("linear: input width " + std::to_string(x.dim(1)) + " vs weight " +
                     shape_string(weight.shape()));
  }
  require_shape(bias, {weight.dim(0)}, "linear bias");
  Tensor<Real> y({x.dim(0), weight.dim(0)});
  auto out = y.matrix();
  out.noalias() = x.matrix() * weight.matrix().transpose();
  out.rowwise() += bias.matrix().row(0);
  return y;
}

template <typename Real>
LinearGrads<Real> linear_backward(const Tensor<Real>& x, const Tensor<Real>& weight,
                                  const Tensor<Real>& grad_out) {
  require_shape(grad_out, {x.dim(0), weight.dim(0)}, "linear upstream gradient");
  LinearGrads<Real> g{Tensor<Real>(x.shape()), Tensor<Real>(weight.shape()), Tensor<Real>({weight.dim(0)})};
  g.input.matrix().noalias() = grad_out.matrix() * weight.matrix();
  g.weight.matrix().noalias() = grad_out.matrix().transpose() * x.matrix();
  g.bias.matrix().row(0) = grad_out.matrix().colwise().sum();
  return g;
}

}  // namespace mtlsed::nn
