#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtlsed/tensor.hpp"

/// Multiple-instance pooling of frame-level event logits into bag-level
/// logits. Every operator is a convex combination of the frame values, so the
/// pooled value always lies between the frame minimum and maximum.
namespace mtlsed::milpool {

enum class PoolingKind { max, average, exp_softmax, attention };

inline constexpr PoolingKind kAllPoolings[] = {PoolingKind::max, PoolingKind::average,
                                               PoolingKind::exp_softmax, PoolingKind::attention};

/// Attention logits are clamped to this magnitude before exponentiation.
inline constexpr double kAttentionClamp = 10.0;

inline std::string_view to_string(PoolingKind k) {
  switch (k) {
    case PoolingKind::max: return "mp";
    case PoolingKind::average: return "ap";
    case PoolingKind::exp_softmax: return "es";
    case PoolingKind::attention: return "at";
  }
  return "?";
}

/// Accepts the short names mp/ap/es/at in either case.
inline PoolingKind parse_pooling(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (PoolingKind k : kAllPoolings) {
    if (lower == to_string(k)) return k;
  }
  throw InvalidConfig("unknown pooling kind '" + std::string(name) + "' (expected mp, ap, es or at)");
}

template <typename Real>
void require_nonempty(std::span<const Real> x, const char* op) {
  if (x.empty()) throw InvalidInput(std::string(op) + ": empty input");
}

// ---- scalar operators over one class's T frame logits ----

template <typename Real>
std::size_t argmax_first(std::span<const Real> x) {
  std::size_t best = 0;
  for (std::size_t t = 1; t < x.size(); ++t) {
    if (x[t] > x[best]) best = t;
  }
  return best;
}

template <typename Real>
Real pool_max(std::span<const Real> x) {
  require_nonempty(x, "pool_max");
  return x[argmax_first(x)];
}

template <typename Real>
void pool_max_backward(std::span<const Real> x, Real dy, std::span<Real> dx) {
  std::fill(dx.begin(), dx.end(), Real(0));
  dx[argmax_first(x)] = dy;
}

template <typename Real>
Real pool_avg(std::span<const Real> x) {
  require_nonempty(x, "pool_avg");
  Real sum = 0;
  for (Real v : x) sum += v;
  return sum / static_cast<Real>(x.size());
}

template <typename Real>
void pool_avg_backward(std::span<const Real> x, Real dy, std::span<Real> dx) {
  std::fill(dx.begin(), dx.end(), dy / static_cast<Real>(x.size()));
}

/// sum_t x_t e^{x_t} / sum_t e^{x_t}, with the maximum subtracted inside both
/// exponentials.
template <typename Real>
Real pool_expsoftmax(std::span<const Real> x) {
  require_nonempty(x, "pool_expsoftmax");
  const Real hi = *std::max_element(x.begin(), x.end());
  Real num = 0, den = 0;
  for (Real v : x) {
    const Real e = std::exp(v - hi);
    num += v * e;
    den += e;
  }
  return num / den;
}

/// dy/dx_j = e^{x_j} (1 + x_j - y) / sum_t e^{x_t}.
template <typename Real>
void pool_expsoftmax_backward(std::span<const Real> x, Real y, Real dy, std::span<Real> dx) {
  const Real hi = *std::max_element(x.begin(), x.end());
  Real den = 0;
  for (Real v : x) den += std::exp(v - hi);
  for (std::size_t j = 0; j < x.size(); ++j) {
    dx[j] = dy * std::exp(x[j] - hi) * (Real(1) + x[j] - y) / den;
  }
}

template <typename Real>
Real clamp_attention(Real a) {
  const auto c = static_cast<Real>(kAttentionClamp);
  return std::clamp(a, -c, c);
}

/// sum_t w_t x_t / sum_t w_t with w_t = exp(clamp(a_t, -10, 10)).
template <typename Real>
Real pool_attention(std::span<const Real> x, std::span<const Real> a) {
  require_nonempty(x, "pool_attention");
  if (a.size() != x.size()) throw ShapeError("pool_attention: attention length differs from input");
  Real hi = clamp_attention(a[0]);
  for (Real v : a) hi = std::max(hi, clamp_attention(v));
  Real num = 0, den = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const Real w = std::exp(clamp_attention(a[t]) - hi);
    num += w * x[t];
    den += w;
  }
  return num / den;
}

/// dy/dx_j = w_j / sum w; dy/da_j = w_j (x_j - y) / sum w inside the clamp
/// range, 0 outside it.
template <typename Real>
void pool_attention_backward(std::span<const Real> x, std::span<const Real> a, Real y, Real dy,
                             std::span<Real> dx, std::span<Real> da) {
  Real hi = clamp_attention(a[0]);
  for (Real v : a) hi = std::max(hi, clamp_attention(v));
  Real den = 0;
  for (Real v : a) den += std::exp(clamp_attention(v) - hi);
  const auto c = static_cast<Real>(kAttentionClamp);
  for (std::size_t j = 0; j < x.size(); ++j) {
    const Real w = std::exp(clamp_attention(a[j]) - hi) / den;
    dx[j] = dy * w;
    da[j] = (a[j] > -c && a[j] < c) ? dy * w * (x[j] - y) : Real(0);
  }
}

// ---- per-class pooling over a T x M matrix ----

template <typename Real>
struct PoolingInput {
  Tensor<Real> frame_logits;                     // (T, M)
  std::optional<Tensor<Real>> attention_logits;  // (T, M), attention pooling only
};

template <typename Real>
struct PoolingGrads {
  Tensor<Real> frame_logits;
  Tensor<Real> attention_logits;  // empty unless attention pooling
};

namespace detail {

template <typename Real>
void check_input(PoolingKind kind, const Tensor<Real>& logits, const Tensor<Real>* attention) {
  require_rank(logits, 2, "pool frame logits");
  if (logits.dim(0) == 0) throw InvalidInput("pool: no frames");
  if (kind == PoolingKind::attention) {
    if (!attention) throw InvalidInput("pool: attention pooling requires attention logits");
    require_shape(*attention, logits.shape(), "pool attention logits");
  } else if (attention) {
    throw InvalidInput("pool: attention logits are only valid with attention pooling");
  }
}

template <typename Real>
std::vector<Real> column(const Tensor<Real>& m, std::size_t j) {
  std::vector<Real> c(m.dim(0));
  for (std::size_t t = 0; t < c.size(); ++t) c[t] = m.at(t, j);
  return c;
}

}  // namespace detail

template <typename Real>
Real pool_scalar(PoolingKind kind, std::span<const Real> x, std::span<const Real> a = {}) {
  switch (kind) {
    case PoolingKind::max: return pool_max(x);
    case PoolingKind::average: return pool_avg(x);
    case PoolingKind::exp_softmax: return pool_expsoftmax(x);
    case PoolingKind::attention: return pool_attention(x, a);
  }
  throw InvalidInput("pool: bad kind");
}

/// Pools each event class independently over its T frames: (T, M) -> (M).
template <typename Real>
Tensor<Real> pool(PoolingKind kind, const Tensor<Real>& frame_logits,
                  const Tensor<Real>* attention_logits = nullptr) {
  detail::check_input(kind, frame_logits, attention_logits);
  const std::size_t classes = frame_logits.dim(1);
  Tensor<Real> y({classes});
  for (std::size_t m = 0; m < classes; ++m) {
    const std::vector<Real> x = detail::column(frame_logits, m);
    std::vector<Real> a;
    if (attention_logits) a = detail::column(*attention_logits, m);
    y[m] = pool_scalar<Real>(kind, x, a);
  }
  return y;
}

template <typename Real>
Tensor<Real> pool(PoolingKind kind, const PoolingInput<Real>& in) {
  return pool(kind, in.frame_logits, in.attention_logits ? &*in.attention_logits : nullptr);
}

template <typename Real>
PoolingGrads<Real> pool_backward(PoolingKind kind, const Tensor<Real>& frame_logits,
                                 const Tensor<Real>* attention_logits, const Tensor<Real>& pooled,
                                 const Tensor<Real>& grad_out) {
  detail::check_input(kind, frame_logits, attention_logits);
  const std::size_t steps = frame_logits.dim(0), classes = frame_logits.dim(1);
  require_shape(grad_out, {classes}, "pool upstream gradient");
  PoolingGrads<Real> g;
  g.frame_logits = Tensor<Real>(frame_logits.shape());
  if (kind == PoolingKind::attention) g.attention_logits = Tensor<Real>(frame_logits.shape());
  std::vector<Real> dx(steps), da(steps);
  for (std::size_t m = 0; m < classes; ++m) {
    const std::vector<Real> x = detail::column(frame_logits, m);
    switch (kind) {
      case PoolingKind::max: pool_max_backward<Real>(x, grad_out[m], dx); break;
      case PoolingKind::average: pool_avg_backward<Real>(x, grad_out[m], dx); break;
      case PoolingKind::exp_softmax: pool_expsoftmax_backward<Real>(x, pooled[m], grad_out[m], dx); break;
      case PoolingKind::attention: {
        const std::vector<Real> a = detail::column(*attention_logits, m);
        pool_attention_backward<Real>(x, a, pooled[m], grad_out[m], dx, da);
        for (std::size_t t = 0; t < steps; ++t) g.attention_logits.at(t, m) = da[t];
        break;
      }
    }
    for (std::size_t t = 0; t < steps; ++t) g.frame_logits.at(t, m) = dx[t];
  }
  return g;
}

}  // namespace mtlsed::milpool
