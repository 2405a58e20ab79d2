#pragma once

#include <cmath>

#include "mtlsed/nn/activation.hpp"
#include "mtlsed/tensor.hpp"

namespace mtlsed::nn {

/// Weights for one direction. Rows of w_input / w_hidden / bias are stacked
/// gate blocks [update z; reset r; candidate n], each `hidden` tall:
///
///   z = sigmoid(Wz x + Uz h + bz)
///   r = sigmoid(Wr x + Ur h + br)
///   n = tanh(Wn x + Un (r * h) + bn)
///   h' = (1 - z) * h + z * n
template <typename Real>
struct GruDirection {
  Tensor<Real> w_input;   // (3H, D)
  Tensor<Real> w_hidden;  // (3H, H)
  Tensor<Real> bias;      // (3H)

  std::size_t hidden() const { return w_hidden.dim(1); }
};

template <typename Real>
struct GruDirectionCache {
  RowMatrix<Real> h_prev, z, r, n;  // (T, H), indexed by time position
};

template <typename Real>
struct BiGruCache {
  Tensor<Real> input;
  GruDirectionCache<Real> forward, backward;
};

template <typename Real>
struct BiGruOutput {
  Tensor<Real> y;  // (T, 2H): forward half then backward half
  BiGruCache<Real> cache;
};

template <typename Real>
struct GruDirectionGrads {
  Tensor<Real> w_input, w_hidden, bias;
};

template <typename Real>
struct BiGruGrads {
  Tensor<Real> input;
  GruDirectionGrads<Real> forward, backward;
};

namespace detail {

template <typename Real>
void check_gru_params(const GruDirection<Real>& p, std::size_t d_in) {
  require_rank(p.w_hidden, 2, "gru w_hidden");
  const std::size_t h = p.hidden();
  require_shape(p.w_input, {3 * h, d_in}, "gru w_input");
  require_shape(p.w_hidden, {3 * h, h}, "gru w_hidden");
  require_shape(p.bias, {3 * h}, "gru bias");
}

template <typename Real>
void gru_direction_forward(const Tensor<Real>& x, const GruDirection<Real>& p, bool reverse,
                           GruDirectionCache<Real>& cache, Tensor<Real>& y, std::size_t col_offset) {
  using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
  const auto steps = static_cast<Eigen::Index>(x.dim(0));
  const auto h = static_cast<Eigen::Index>(p.hidden());
  RowMatrix<Real> proj = x.matrix() * p.w_input.matrix().transpose();
  proj.rowwise() += p.bias.matrix().row(0);
  const auto u = p.w_hidden.matrix();

  cache.h_prev.resize(steps, h);
  cache.z.resize(steps, h);
  cache.r.resize(steps, h);
  cache.n.resize(steps, h);
  Vec state = Vec::Zero(h);
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    const Vec zr = u.topRows(2 * h) * state;
    Vec z(h), r(h), n(h);
    for (Eigen::Index k = 0; k < h; ++k) {
      z(k) = sigmoid(proj(t, k) + zr(k));
      r(k) = sigmoid(proj(t, h + k) + zr(h + k));
    }
    const Vec gated = r.cwiseProduct(state);
    const Vec cand = u.bottomRows(h) * gated;
    for (Eigen::Index k = 0; k < h; ++k) n(k) = std::tanh(proj(t, 2 * h + k) + cand(k));
    cache.h_prev.row(t) = state.transpose();
    cache.z.row(t) = z.transpose();
    cache.r.row(t) = r.transpose();
    cache.n.row(t) = n.transpose();
    state = (Vec::Ones(h) - z).cwiseProduct(state) + z.cwiseProduct(n);
    for (Eigen::Index k = 0; k < h; ++k) {
      y.at(static_cast<std::size_t>(t), col_offset + static_cast<std::size_t>(k)) = state(k);
    }
  }
}

template <typename Real>
GruDirectionGrads<Real> gru_direction_backward(const Tensor<Real>& x, const GruDirection<Real>& p,
                                               bool reverse, const GruDirectionCache<Real>& cache,
                                               const Tensor<Real>& grad_out, std::size_t col_offset,
                                               Tensor<Real>& grad_input) {
  using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
  const auto steps = static_cast<Eigen::Index>(x.dim(0));
  const auto h = static_cast<Eigen::Index>(p.hidden());
  const auto u = p.w_hidden.matrix();

  GruDirectionGrads<Real> g{Tensor<Real>(p.w_input.shape()), Tensor<Real>(p.w_hidden.shape()),
                            Tensor<Real>(p.bias.shape())};
  auto du = g.w_hidden.matrix();
  RowMatrix<Real> dproj = RowMatrix<Real>::Zero(steps, 3 * h);
  Vec carry = Vec::Zero(h);
  for (Eigen::Index s = steps - 1; s >= 0; --s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    Vec dh = carry;
    for (Eigen::Index k = 0; k < h; ++k) {
      dh(k) += grad_out.at(static_cast<std::size_t>(t), col_offset + static_cast<std::size_t>(k));
    }
    const Vec hp = cache.h_prev.row(t).transpose();
    const Vec z = cache.z.row(t).transpose();
    const Vec r = cache.r.row(t).transpose();
    const Vec n = cache.n.row(t).transpose();

    Vec dhp = dh.cwiseProduct(Vec::Ones(h) - z);
    const Vec dz = dh.cwiseProduct(n - hp);
    const Vec dan = dh.cwiseProduct(z).cwiseProduct(Vec::Ones(h) - n.cwiseProduct(n));
    const Vec d_gated = u.bottomRows(h).transpose() * dan;
    const Vec dr = d_gated.cwiseProduct(hp);
    dhp += d_gated.cwiseProduct(r);
    const Vec dar = dr.cwiseProduct(r).cwiseProduct(Vec::Ones(h) - r);
    const Vec daz = dz.cwiseProduct(z).cwiseProduct(Vec::Ones(h) - z);

    du.topRows(h).noalias() += daz * hp.transpose();
    du.middleRows(h, h).noalias() += dar * hp.transpose();
    du.bottomRows(h).noalias() += dan * r.cwiseProduct(hp).transpose();
    dhp.noalias() += u.topRows(h).transpose() * daz;
    dhp.noalias() += u.middleRows(h, h).transpose() * dar;

    dproj.block(t, 0, 1, h) = daz.transpose();
    dproj.block(t, h, 1, h) = dar.transpose();
    dproj.block(t, 2 * h, 1, h) = dan.transpose();
    carry = dhp;
  }
  g.w_input.matrix().noalias() = dproj.transpose() * x.matrix();
  g.bias.matrix().row(0) = dproj.colwise().sum();
  grad_input.matrix().noalias() += dproj * p.w_input.matrix();
  return g;
}

}  // namespace detail

/// Bidirectional GRU over a (T, D) sequence with zero initial state in both
/// directions. Output row t concatenates the forward and backward states.
template <typename Real>
BiGruOutput<Real> bigru_forward(const Tensor<Real>& x, const GruDirection<Real>& fwd,
                                const GruDirection<Real>& bwd) {
  require_rank(x, 2, "gru input");
  if (x.dim(0) == 0) throw InvalidInput("gru: empty sequence");
  detail::check_gru_params(fwd, x.dim(1));
  detail::check_gru_params(bwd, x.dim(1));
  if (fwd.hidden() != bwd.hidden()) throw ShapeError("gru: direction widths differ");

  BiGruOutput<Real> out;
  out.y = Tensor<Real>({x.dim(0), 2 * fwd.hidden()});
  out.cache.input = x;
  detail::gru_direction_forward(x, fwd, false, out.cache.forward, out.y, 0);
  detail::gru_direction_forward(x, bwd, true, out.cache.backward, out.y, fwd.hidden());
  return out;
}

template <typename Real>
BiGruGrads<Real> bigru_backward(const BiGruCache<Real>& cache, const GruDirection<Real>& fwd,
                                const GruDirection<Real>& bwd, const Tensor<Real>& grad_out) {
  require_shape(grad_out, {cache.input.dim(0), 2 * fwd.hidden()}, "gru upstream gradient");
  BiGruGrads<Real> g;
  g.input = Tensor<Real>(cache.input.shape());
  g.forward = detail::gru_direction_backward(cache.input, fwd, false, cache.forward, grad_out, 0, g.input);
  g.backward = detail::gru_direction_backward(cache.input, bwd, true, cache.backward, grad_out,
                                              fwd.hidden(), g.input);
  return g;
}

}  // namespace mtlsed::nn
