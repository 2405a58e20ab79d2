#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "mtlsed/tensor.hpp"

/// Scene cross-entropy, frame/bag binary cross-entropies and their weighted
/// combination. All reductions are sums over frames and classes; callers
/// average over the batch.
namespace mtlsed::loss {

inline constexpr double kProbClamp = 1e-7;

struct LossWeights {
  double alpha = 0.001;  // scene
  double beta = 1.0;     // event
  double gamma = 0.5;    // frame term of the weak event loss
  double zeta = 0.05;    // bag term of the weak event loss

  void validate() const {
    for (double w : {alpha, beta, gamma, zeta}) {
      if (!(w >= 0) || !std::isfinite(w)) throw InvalidConfig("loss weights must be finite and >= 0");
    }
  }
  bool operator==(const LossWeights&) const = default;
};

template <typename Real>
Real clamp_prob(Real p) {
  const auto eps = static_cast<Real>(kProbClamp);
  return std::clamp(p, eps, Real(1) - eps);
}

// d clamp(p) / dp: 1 inside the clamp range, 0 once clamped.
template <typename Real>
Real clamp_slope(Real p) {
  const auto eps = static_cast<Real>(kProbClamp);
  return (p >= eps && p <= Real(1) - eps) ? Real(1) : Real(0);
}

template <typename Real>
Real bce(Real p, Real z) {
  const Real q = clamp_prob(p);
  return -(z * std::log(q) + (Real(1) - z) * std::log(Real(1) - q));
}

template <typename Real>
Real bce_grad(Real p, Real z) {
  const Real q = clamp_prob(p);
  return clamp_slope(p) * (-z / q + (Real(1) - z) / (Real(1) - q));
}

inline std::vector<double> one_hot(std::size_t classes, std::size_t index) {
  if (index >= classes) throw InvalidInput("one_hot: class index out of range");
  std::vector<double> z(classes, 0.0);
  z[index] = 1.0;
  return z;
}

/// -sum_n z_n log y_n for a one-hot target z.
template <typename Real>
Real scene_ce(std::span<const Real> probs, std::span<const Real> target) {
  if (probs.size() != target.size()) throw ShapeError("scene_ce: probability/target length mismatch");
  Real l = 0;
  for (std::size_t n = 0; n < probs.size(); ++n) {
    if (target[n] != Real(0)) l -= target[n] * std::log(clamp_prob(probs[n]));
  }
  return l;
}

template <typename Real>
std::vector<Real> scene_ce_grad(std::span<const Real> probs, std::span<const Real> target) {
  if (probs.size() != target.size()) throw ShapeError("scene_ce: probability/target length mismatch");
  std::vector<Real> g(probs.size(), Real(0));
  for (std::size_t n = 0; n < probs.size(); ++n) {
    if (target[n] != Real(0)) g[n] = -target[n] * clamp_slope(probs[n]) / clamp_prob(probs[n]);
  }
  return g;
}

/// Frame-level BCE against a strong (T, M) event roll, summed over T and M.
template <typename Real>
Real event_bce_strong(const Tensor<Real>& probs, const Tensor<Real>& roll) {
  require_shape(roll, probs.shape(), "event_bce_strong roll");
  Real l = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) l += bce(probs[i], roll[i]);
  return l;
}

template <typename Real>
Tensor<Real> event_bce_strong_grad(const Tensor<Real>& probs, const Tensor<Real>& roll) {
  require_shape(roll, probs.shape(), "event_bce_strong roll");
  Tensor<Real> g(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = bce_grad(probs[i], roll[i]);
  return g;
}

template <typename Real>
struct WeakLossGrads {
  Tensor<Real> frame_probs;  // (T, M)
  Tensor<Real> bag_probs;    // (M)
};

namespace detail {
template <typename Real>
void check_weak(const Tensor<Real>& frame_probs, const Tensor<Real>& bag_probs, const Tensor<Real>& weak) {
  require_rank(frame_probs, 2, "event_weak_loss frame probabilities");
  require_shape(bag_probs, {frame_probs.dim(1)}, "event_weak_loss bag probabilities");
  require_shape(weak, {frame_probs.dim(1)}, "event_weak_loss weak labels");
}
}  // namespace detail

/// gamma * (clip tag z_m applied to every frame probability) + zeta * (z_m
/// against the pooled bag probability). Never reads a strong roll.
template <typename Real>
Real event_weak_loss(const Tensor<Real>& frame_probs, const Tensor<Real>& bag_probs, const Tensor<Real>& weak,
                     double gamma, double zeta) {
  detail::check_weak(frame_probs, bag_probs, weak);
  const std::size_t steps = frame_probs.dim(0), classes = frame_probs.dim(1);
  Real frame_term = 0, bag_term = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t m = 0; m < classes; ++m) frame_term += bce(frame_probs.at(t, m), weak[m]);
  }
  for (std::size_t m = 0; m < classes; ++m) bag_term += bce(bag_probs[m], weak[m]);
  return static_cast<Real>(gamma) * frame_term + static_cast<Real>(zeta) * bag_term;
}

template <typename Real>
WeakLossGrads<Real> event_weak_loss_grad(const Tensor<Real>& frame_probs, const Tensor<Real>& bag_probs,
                                         const Tensor<Real>& weak, double gamma, double zeta) {
  detail::check_weak(frame_probs, bag_probs, weak);
  const std::size_t steps = frame_probs.dim(0), classes = frame_probs.dim(1);
  WeakLossGrads<Real> g{Tensor<Real>(frame_probs.shape()), Tensor<Real>(bag_probs.shape())};
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t m = 0; m < classes; ++m) {
      g.frame_probs.at(t, m) = static_cast<Real>(gamma) * bce_grad(frame_probs.at(t, m), weak[m]);
    }
  }
  for (std::size_t m = 0; m < classes; ++m) {
    g.bag_probs[m] = static_cast<Real>(zeta) * bce_grad(bag_probs[m], weak[m]);
  }
  return g;
}

inline double total_loss(double scene, double event, const LossWeights& w) {
  return w.alpha * scene + w.beta * event;
}

}  // namespace mtlsed::loss
