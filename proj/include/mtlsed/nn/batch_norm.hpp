#pragma once

#include <cmath>
#include <vector>

#include "mtlsed/tensor.hpp"

namespace mtlsed::nn {

enum class Mode { train, eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

template <typename Real>
struct BatchNormCache {
  Mode mode = Mode::train;
  Tensor<Real> normalized;    // x_hat
  std::vector<Real> inv_std;  // per channel
};

template <typename Real>
struct BatchNormOutput {
  Tensor<Real> y;
  BatchNormCache<Real> cache;
  // Batch statistics (train mode only); variance is the unbiased estimate
  // used for the running-stat update.
  std::vector<Real> batch_mean;
  std::vector<Real> batch_var;
};

template <typename Real>
struct BatchNormGrads {
  Tensor<Real> input;
  Tensor<Real> gamma;
  Tensor<Real> beta;
};

namespace detail {
struct ChannelLayout {
  std::size_t batch, channels, spatial;
};

template <typename Real>
ChannelLayout channel_layout(const Tensor<Real>& x) {
  if (x.rank() < 2) throw ShapeError("batch_norm: input needs rank >= 2, got " + shape_string(x.shape()));
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
  return {x.dim(0), x.dim(1), spatial};
}
}  // namespace detail

/// Per-channel normalisation over (N, C, ...). Train mode normalises with the
/// biased batch variance; eval mode uses the running statistics.
template <typename Real>
BatchNormOutput<Real> batch_norm_forward(const Tensor<Real>& x, const Tensor<Real>& gamma,
                                         const Tensor<Real>& beta, const Tensor<Real>& running_mean,
                                         const Tensor<Real>& running_var, Mode mode,
                                         double eps = kBatchNormEps) {
  const auto lay = detail::channel_layout(x);
  if (lay.batch == 0) throw InvalidInput("batch_norm: empty batch");
  for (const Tensor<Real>* p : {&gamma, &beta, &running_mean, &running_var}) {
    require_shape(*p, {lay.channels}, "batch_norm parameter");
  }
  const std::size_t count = lay.batch * lay.spatial;

  BatchNormOutput<Real> out;
  out.y = Tensor<Real>(x.shape());
  out.cache.mode = mode;
  out.cache.normalized = Tensor<Real>(x.shape());
  out.cache.inv_std.resize(lay.channels);
  std::vector<Real> mean(lay.channels);

  if (mode == Mode::train) {
    out.batch_mean.resize(lay.channels);
    out.batch_var.resize(lay.channels);
    for (std::size_t c = 0; c < lay.channels; ++c) {
      double sum = 0;
      for (std::size_t n = 0; n < lay.batch; ++n) {
        const Real* p = x.data() + (n * lay.channels + c) * lay.spatial;
        for (std::size_t s = 0; s < lay.spatial; ++s) sum += p[s];
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0;
      for (std::size_t n = 0; n < lay.batch; ++n) {
        const Real* p = x.data() + (n * lay.channels + c) * lay.spatial;
        for (std::size_t s = 0; s < lay.spatial; ++s) sq += (p[s] - mu) * (p[s] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<Real>(mu);
      out.cache.inv_std[c] = static_cast<Real>(1.0 / std::sqrt(var + eps));
      out.batch_mean[c] = static_cast<Real>(mu);
      out.batch_var[c] = static_cast<Real>(count > 1 ? sq / static_cast<double>(count - 1) : var);
    }
  } else {
    for (std::size_t c = 0; c < lay.channels; ++c) {
      mean[c] = running_mean[c];
      out.cache.inv_std[c] = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps));
    }
  }

  for (std::size_t n = 0; n < lay.batch; ++n) {
    for (std::size_t c = 0; c < lay.channels; ++c) {
      const std::size_t off = (n * lay.channels + c) * lay.spatial;
      for (std::size_t s = 0; s < lay.spatial; ++s) {
        const Real xh = (x[off + s] - mean[c]) * out.cache.inv_std[c];
        out.cache.normalized[off + s] = xh;
        out.y[off + s] = xh * gamma[c] + beta[c];
      }
    }
  }
  return out;
}

template <typename Real>
BatchNormGrads<Real> batch_norm_backward(const BatchNormCache<Real>& cache, const Tensor<Real>& gamma,
                                         const Tensor<Real>& grad_out) {
  require_shape(grad_out, cache.normalized.shape(), "batch_norm upstream gradient");
  const auto lay = detail::channel_layout(grad_out);
  const auto count = static_cast<Real>(lay.batch * lay.spatial);

  BatchNormGrads<Real> g{Tensor<Real>(grad_out.shape()), Tensor<Real>({lay.channels}),
                         Tensor<Real>({lay.channels})};
  for (std::size_t c = 0; c < lay.channels; ++c) {
    Real sum_dy = 0, sum_dy_xh = 0;
    for (std::size_t n = 0; n < lay.batch; ++n) {
      const std::size_t off = (n * lay.channels + c) * lay.spatial;
      for (std::size_t s = 0; s < lay.spatial; ++s) {
        sum_dy += grad_out[off + s];
        sum_dy_xh += grad_out[off + s] * cache.normalized[off + s];
      }
    }
    g.gamma[c] = sum_dy_xh;
    g.beta[c] = sum_dy;
    const Real scale = gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < lay.batch; ++n) {
      const std::size_t off = (n * lay.channels + c) * lay.spatial;
      for (std::size_t s = 0; s < lay.spatial; ++s) {
        if (cache.mode == Mode::train) {
          g.input[off + s] = scale / count *
                             (count * grad_out[off + s] - sum_dy - cache.normalized[off + s] * sum_dy_xh);
        } else {
          g.input[off + s] = scale * grad_out[off + s];
        }
      }
    }
  }
  return g;
}

/// running <- momentum * running + (1 - momentum) * batch.
template <typename Real>
void update_running_stats(Tensor<Real>& running_mean, Tensor<Real>& running_var,
                          const std::vector<Real>& batch_mean, const std::vector<Real>& batch_var,
                          double momentum = kBatchNormMomentum) {
  const auto m = static_cast<Real>(momentum);
  for (std::size_t c = 0; c < running_mean.size(); ++c) {
    running_mean[c] = m * running_mean[c] + (Real(1) - m) * batch_mean[c];
    running_var[c] = m * running_var[c] + (Real(1) - m) * batch_var[c];
  }
}

}  // namespace mtlsed::nn
