#pragma once

#include <vector>

#include "mtlsed/tensor.hpp"

namespace mtlsed::nn {

template <typename Real>
struct MaxPoolOutput {
  Tensor<Real> y;
  std::vector<std::size_t> argmax;  // flat input index per output cell
};

/// Non-overlapping max pooling over the last two axes of (N, C, T, F).
/// Ties resolve to the first maximal element in row-major window order.
template <typename Real>
MaxPoolOutput<Real> max_pool2d_forward(const Tensor<Real>& x, std::size_t kt, std::size_t kf) {
  require_rank(x, 4, "max_pool2d input");
  if (kt == 0 || kf == 0) throw ShapeError("max_pool2d: zero kernel");
  const std::size_t n = x.dim(0), c = x.dim(1), t = x.dim(2), f = x.dim(3);
  if (t % kt != 0 || f % kf != 0) {
    throw ShapeError("max_pool2d: input " + shape_string(x.shape()) + " not divisible by kernel " +
                     std::to_string(kt) + "x" + std::to_string(kf));
  }
  const std::size_t ot = t / kt, of = f / kf;
  MaxPoolOutput<Real> out{Tensor<Real>({n, c, ot, of}), std::vector<std::size_t>(n * c * ot * of)};
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * t * f;
    for (std::size_t i = 0; i < ot; ++i) {
      for (std::size_t j = 0; j < of; ++j, ++o) {
        std::size_t best = base + (i * kt) * f + j * kf;
        for (std::size_t a = 0; a < kt; ++a) {
          for (std::size_t b = 0; b < kf; ++b) {
            const std::size_t idx = base + (i * kt + a) * f + j * kf + b;
            if (x[idx] > x[best]) best = idx;
          }
        }
        out.y[o] = x[best];
        out.argmax[o] = best;
      }
    }
  }
  return out;
}

template <typename Real>
Tensor<Real> max_pool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                 const Tensor<Real>& grad_out) {
  if (grad_out.size() != argmax.size()) throw ShapeError("max_pool2d backward: gradient/argmax mismatch");
  Tensor<Real> dx(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += grad_out[o];
  return dx;
}

/// Per-channel maximum over every time-frequency cell: (N, C, T, F) -> (N, C).
template <typename Real>
MaxPoolOutput<Real> global_max_pool_forward(const Tensor<Real>& x) {
  require_rank(x, 4, "global_max_pool input");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (plane == 0) throw ShapeError("global_max_pool: empty plane");
  MaxPoolOutput<Real> out{Tensor<Real>({n, c}), std::vector<std::size_t>(n * c)};
  for (std::size_t p = 0; p < n * c; ++p) {
    std::size_t best = p * plane;
    for (std::size_t i = 1; i < plane; ++i) {
      if (x[p * plane + i] > x[best]) best = p * plane + i;
    }
    out.y[p] = x[best];
    out.argmax[p] = best;
  }
  return out;
}

}  // namespace mtlsed::nn
