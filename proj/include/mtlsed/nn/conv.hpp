#pragma once

#include "mtlsed/tensor.hpp"

namespace mtlsed::nn {

template <typename Real>
struct Conv2dGrads {
  Tensor<Real> input;
  Tensor<Real> weight;
  Tensor<Real> bias;  // empty when the conv has no bias
};

namespace detail {

struct ConvGeometry {
  std::size_t batch, in_ch, out_ch, time, freq, kt, kf;
  std::size_t pad_t() const { return kt / 2; }
  std::size_t pad_f() const { return kf / 2; }
  std::size_t patch() const { return in_ch * kt * kf; }
  std::size_t plane() const { return time * freq; }
};

template <typename Real>
ConvGeometry conv_geometry(const Tensor<Real>& x, const Tensor<Real>& weight) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (weight.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(x.dim(1)));
  }
  if (weight.dim(2) % 2 == 0 || weight.dim(3) % 2 == 0) {
    throw ShapeError("conv2d: same padding needs odd kernel sizes, got " + shape_string(weight.shape()));
  }
  return {x.dim(0), x.dim(1), weight.dim(0), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3)};
}

// Unfolds one batch item into a (Cin*KT*KF) x (T*F) patch matrix.
template <typename Real>
void im2col(const Real* x, const ConvGeometry& g, RowMatrix<Real>& col) {
  col.setZero(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.plane()));
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const Real* plane = x + c * g.plane();
    for (std::size_t i = 0; i < g.kt; ++i) {
      for (std::size_t j = 0; j < g.kf; ++j) {
        Real* row = col.data() + ((c * g.kt + i) * g.kf + j) * g.plane();
        for (std::size_t t = 0; t < g.time; ++t) {
          const auto st = static_cast<std::ptrdiff_t>(t + i) - static_cast<std::ptrdiff_t>(g.pad_t());
          if (st < 0 || st >= static_cast<std::ptrdiff_t>(g.time)) continue;
          for (std::size_t f = 0; f < g.freq; ++f) {
            const auto sf = static_cast<std::ptrdiff_t>(f + j) - static_cast<std::ptrdiff_t>(g.pad_f());
            if (sf < 0 || sf >= static_cast<std::ptrdiff_t>(g.freq)) continue;
            row[t * g.freq + f] = plane[static_cast<std::size_t>(st) * g.freq + static_cast<std::size_t>(sf)];
          }
        }
      }
    }
  }
}

template <typename Real>
void col2im_add(const RowMatrix<Real>& col, const ConvGeometry& g, Real* dx) {
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    Real* plane = dx + c * g.plane();
    for (std::size_t i = 0; i < g.kt; ++i) {
      for (std::size_t j = 0; j < g.kf; ++j) {
        const Real* row = col.data() + ((c * g.kt + i) * g.kf + j) * g.plane();
        for (std::size_t t = 0; t < g.time; ++t) {
          const auto st = static_cast<std::ptrdiff_t>(t + i) - static_cast<std::ptrdiff_t>(g.pad_t());
          if (st < 0 || st >= static_cast<std::ptrdiff_t>(g.time)) continue;
          for (std::size_t f = 0; f < g.freq; ++f) {
            const auto sf = static_cast<std::ptrdiff_t>(f + j) - static_cast<std::ptrdiff_t>(g.pad_f());
            if (sf < 0 || sf >= static_cast<std::ptrdiff_t>(g.freq)) continue;
            plane[static_cast<std::size_t>(st) * g.freq + static_cast<std::size_t>(sf)] += row[t * g.freq + f];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution with zero "same" padding over (N, C, T, F) input; weight is
/// (Cout, Cin, KT, KF) with odd kernel sizes. Output is (N, Cout, T, F).
template <typename Real>
Tensor<Real> conv2d_forward(const Tensor<Real>& x, const Tensor<Real>& weight,
                            const Tensor<Real>* bias = nullptr) {
  const auto g = detail::conv_geometry(x, weight);
  if (bias && bias->shape() != Shape{g.out_ch}) {
    throw ShapeError("conv2d: bias shape " + shape_string(bias->shape()));
  }
  Tensor<Real> y({g.batch, g.out_ch, g.time, g.freq});
  const ConstMatrixMap<Real> w(weight.data(), static_cast<Eigen::Index>(g.out_ch),
                               static_cast<Eigen::Index>(g.patch()));
  RowMatrix<Real> col;
  for (std::size_t n = 0; n < g.batch; ++n) {
    detail::im2col(x.data() + n * g.in_ch * g.plane(), g, col);
    MatrixMap<Real> out(y.data() + n * g.out_ch * g.plane(), static_cast<Eigen::Index>(g.out_ch),
                        static_cast<Eigen::Index>(g.plane()));
    out.noalias() = w * col;
    if (bias) {
      for (std::size_t o = 0; o < g.out_ch; ++o) out.row(static_cast<Eigen::Index>(o)).array() += (*bias)[o];
    }
  }
  return y;
}

template <typename Real>
Conv2dGrads<Real> conv2d_backward(const Tensor<Real>& x, const Tensor<Real>& weight,
                                  const Tensor<Real>& grad_out, bool with_bias) {
  const auto g = detail::conv_geometry(x, weight);
  require_shape(grad_out, {g.batch, g.out_ch, g.time, g.freq}, "conv2d upstream gradient");

  Conv2dGrads<Real> grads{Tensor<Real>(x.shape()), Tensor<Real>(weight.shape()), {}};
  if (with_bias) grads.bias = Tensor<Real>({g.out_ch});

  const ConstMatrixMap<Real> w(weight.data(), static_cast<Eigen::Index>(g.out_ch),
                               static_cast<Eigen::Index>(g.patch()));
  MatrixMap<Real> dw(grads.weight.data(), static_cast<Eigen::Index>(g.out_ch),
                     static_cast<Eigen::Index>(g.patch()));
  RowMatrix<Real> col, dcol;
  for (std::size_t n = 0; n < g.batch; ++n) {
    detail::im2col(x.data() + n * g.in_ch * g.plane(), g, col);
    const ConstMatrixMap<Real> dy(grad_out.data() + n * g.out_ch * g.plane(),
                                  static_cast<Eigen::Index>(g.out_ch), static_cast<Eigen::Index>(g.plane()));
    dw.noalias() += dy * col.transpose();
    dcol.noalias() = w.transpose() * dy;
    detail::col2im_add(dcol, g, grads.input.data() + n * g.in_ch * g.plane());
    if (with_bias) {
      for (std::size_t o = 0; o < g.out_ch; ++o) grads.bias[o] += dy.row(static_cast<Eigen::Index>(o)).sum();
    }
  }
  return grads;
}

}  // namespace mtlsed::nn
