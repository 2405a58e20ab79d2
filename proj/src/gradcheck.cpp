#include "mtlsed/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>

#include "mtlsed/loss.hpp"
#include "mtlsed/milpool.hpp"
#include "mtlsed/model.hpp"
#include "mtlsed/nn/activation.hpp"
#include "mtlsed/nn/batch_norm.hpp"
#include "mtlsed/nn/conv.hpp"
#include "mtlsed/nn/gru.hpp"
#include "mtlsed/nn/linear.hpp"
#include "mtlsed/nn/pooling.hpp"

namespace mtlsed::gradcheck {

namespace {

using T = Tensor<double>;
using Rng = std::mt19937_64;

T uniform(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  T t(shape);
  for (double& v : t.values()) v = d(rng);
  return t;
}

// Values at least 0.05 apart in shuffled order, so every max has a clear winner.
T distinct(const Shape& shape, Rng& rng) {
  T t(shape);
  std::vector<double> v(t.size());
  std::uniform_real_distribution<double> offset(-0.5, 0.5);
  const double base = offset(rng) - 0.025 * static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = base + 0.05 * static_cast<double>(i);
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

T binary(const Shape& shape, Rng& rng) {
  std::bernoulli_distribution d(0.5);
  T t(shape);
  for (double& v : t.values()) v = d(rng) ? 1.0 : 0.0;
  return t;
}

// Upstream weights, scaled so the objective stays O(1).
T upstream(const Shape& shape, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(shape_numel(shape)));
  return uniform(shape, rng, -scale, scale);
}

double dot(const T& a, const T& b) {
  require_shape(b, a.shape(), "gradcheck dot");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Probe {
  T* value;
  T analytic;
};

double compare(const std::function<double()>& objective, std::vector<Probe> probes) {
  double worst = 0;
  for (Probe& p : probes) {
    require_shape(p.analytic, p.value->shape(), "gradcheck analytic gradient");
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      double& x = (*p.value)[i];
      const double saved = x;
      x = saved + kStep;
      const double up = objective();
      x = saved - kStep;
      const double down = objective();
      x = saved;
      worst = std::max(worst, relative_error(p.analytic[i], (up - down) / (2 * kStep)));
    }
  }
  return worst;
}

double check_conv2d(Rng& rng) {
  T x = uniform({2, 2, 4, 5}, rng), w = uniform({3, 2, 3, 3}, rng), b = uniform({3}, rng);
  const T r = upstream({2, 3, 4, 5}, rng);
  const auto g = nn::conv2d_backward(x, w, r, true);
  return compare([&] { return dot(r, nn::conv2d_forward(x, w, &b)); },
                 {{&x, g.input}, {&w, g.weight}, {&b, g.bias}});
}

double check_batch_norm(Rng& rng, nn::Mode mode) {
  T x = uniform({3, 2, 2, 3}, rng, -2, 2), gamma = uniform({2}, rng, 0.5, 1.5), beta = uniform({2}, rng, -0.5, 0.5);
  const T mean = mode == nn::Mode::train ? T({2}) : uniform({2}, rng, -0.5, 0.5);
  const T var = uniform({2}, rng, 0.5, 2.0);
  const T r = upstream(x.shape(), rng);
  const auto out = nn::batch_norm_forward(x, gamma, beta, mean, var, mode);
  const auto g = nn::batch_norm_backward(out.cache, gamma, r);
  return compare([&] { return dot(r, nn::batch_norm_forward(x, gamma, beta, mean, var, mode).y); },
                 {{&x, g.input}, {&gamma, g.gamma}, {&beta, g.beta}});
}

double check_leaky_relu(Rng& rng) {
  T x;
  do {
    x = uniform({4, 5}, rng, -2, 2);
  } while (std::any_of(x.values().begin(), x.values().end(), [](double v) { return std::abs(v) < kKinkMargin; }));
  const T r = upstream(x.shape(), rng);
  return compare([&] { return dot(r, nn::leaky_relu_forward(x)); }, {{&x, nn::leaky_relu_backward(x, r)}});
}

double check_max_pool2d(Rng& rng) {
  T x = distinct({2, 2, 4, 6}, rng);
  const auto out = nn::max_pool2d_forward(x, 2, 3);
  const T r = upstream(out.y.shape(), rng);
  return compare([&] { return dot(r, nn::max_pool2d_forward(x, 2, 3).y); },
                 {{&x, nn::max_pool2d_backward(x.shape(), out.argmax, r)}});
}

double check_global_max_pool(Rng& rng) {
  T x = distinct({2, 3, 3, 4}, rng);
  const auto out = nn::global_max_pool_forward(x);
  const T r = upstream(out.y.shape(), rng);
  return compare([&] { return dot(r, nn::global_max_pool_forward(x).y); },
                 {{&x, nn::max_pool2d_backward(x.shape(), out.argmax, r)}});
}

nn::GruDirection<double> random_direction(Rng& rng, std::size_t d, std::size_t h) {
  return {uniform({3 * h, d}, rng, -0.6, 0.6), uniform({3 * h, h}, rng, -0.6, 0.6), uniform({3 * h}, rng, -0.3, 0.3)};
}

double check_gru(Rng& rng) {
  const std::size_t steps = 5, d = 3, h = 3;
  T x = uniform({steps, d}, rng);
  auto fwd = random_direction(rng, d, h), bwd = random_direction(rng, d, h);
  const T r = upstream({steps, 2 * h}, rng);
  const auto out = nn::bigru_forward(x, fwd, bwd);
  const auto g = nn::bigru_backward(out.cache, fwd, bwd, r);
  return compare([&] { return dot(r, nn::bigru_forward(x, fwd, bwd).y); },
                 {{&x, g.input},
                  {&fwd.w_input, g.forward.w_input},
                  {&fwd.w_hidden, g.forward.w_hidden},
                  {&fwd.bias, g.forward.bias},
                  {&bwd.w_input, g.backward.w_input},
                  {&bwd.w_hidden, g.backward.w_hidden},
                  {&bwd.bias, g.backward.bias}});
}

double check_linear(Rng& rng) {
  T x = uniform({4, 3}, rng), w = uniform({5, 3}, rng), b = uniform({5}, rng);
  const T r = upstream({4, 5}, rng);
  const auto g = nn::linear_backward(x, w, r);
  return compare([&] { return dot(r, nn::linear_forward(x, w, b)); },
                 {{&x, g.input}, {&w, g.weight}, {&b, g.bias}});
}

double check_softmax(Rng& rng) {
  T x = uniform({3, 5}, rng, -2, 2);
  const T r = upstream(x.shape(), rng);
  return compare([&] { return dot(r, nn::softmax_forward(x)); },
                 {{&x, nn::softmax_backward(nn::softmax_forward(x), r)}});
}

double check_sigmoid(Rng& rng) {
  T x = uniform({10}, rng, -4, 4);
  const T r = upstream(x.shape(), rng);
  return compare([&] { return dot(r, nn::sigmoid_forward(x)); },
                 {{&x, nn::sigmoid_backward(nn::sigmoid_forward(x), r)}});
}

double check_pool(Rng& rng, milpool::PoolingKind kind) {
  const std::size_t steps = 7, classes = 3;
  T x = kind == milpool::PoolingKind::max ? distinct({steps, classes}, rng) : uniform({steps, classes}, rng, -5, 5);
  T a = uniform({steps, classes}, rng, -3, 3);
  const bool attention = kind == milpool::PoolingKind::attention;
  T* att = attention ? &a : nullptr;
  const T y = milpool::pool(kind, x, att);
  const T r = upstream({classes}, rng);
  const auto g = milpool::pool_backward(kind, x, att, y, r);
  std::vector<Probe> probes{{&x, g.frame_logits}};
  if (attention) probes.push_back({&a, g.attention_logits});
  return compare([&] { return dot(r, milpool::pool(kind, x, att)); }, std::move(probes));
}

double check_scene_ce(Rng& rng) {
  const std::size_t classes = 5;
  T p = uniform({classes}, rng, 0.05, 0.95);
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  const auto z = loss::one_hot(classes, pick(rng));
  const auto g = loss::scene_ce_grad<double>(p.values(), z);
  T analytic({classes});
  std::copy(g.begin(), g.end(), analytic.data());
  return compare([&] { return loss::scene_ce<double>(p.values(), z); }, {{&p, analytic}});
}

double check_event_strong(Rng& rng) {
  T p = uniform({6, 4}, rng, 0.05, 0.95);
  const T roll = binary(p.shape(), rng);
  return compare([&] { return loss::event_bce_strong(p, roll); }, {{&p, loss::event_bce_strong_grad(p, roll)}});
}

double check_event_weak(Rng& rng) {
  T frame = uniform({6, 4}, rng, 0.05, 0.95), bag = uniform({4}, rng, 0.05, 0.95);
  const T weak = binary({4}, rng);
  const auto g = loss::event_weak_loss_grad(frame, bag, weak, 0.5, 0.05);
  return compare([&] { return loss::event_weak_loss(frame, bag, weak, 0.5, 0.05); },
                 {{&frame, g.frame_probs}, {&bag, g.bag_probs}});
}

// Which side of every kink the forward pass sits on: leaky-ReLU signs,
// pooling winners and the attention clamp.
std::vector<std::size_t> kink_pattern(const model::ForwardResult<double>& f) {
  std::vector<std::size_t> pattern;
  auto signs = [&](const T& pre) {
    for (double v : pre.values()) pattern.push_back(v > 0);
  };
  auto block = [&](const model::ConvBlockCache<double>& b) {
    signs(b.pre_activation);
    pattern.insert(pattern.end(), b.argmax.begin(), b.argmax.end());
  };
  for (const auto& b : f.cache.shared) block(b);
  for (const auto& b : f.cache.scene) block(b);
  signs(f.cache.scene_fc0_pre);
  signs(f.cache.event_fc0_pre);
  for (double a : f.cache.attention_logits.values()) pattern.push_back(std::abs(a) > 10.0);
  return pattern;
}

double check_model(Rng& rng) {
  const auto cfg = model::ArchConfig::tiny();
  const auto pooling = milpool::PoolingKind::attention;
  const std::size_t batch = 4;
  std::uniform_int_distribution<std::uint64_t> seeds;
  for (int attempt = 0; attempt < 200; ++attempt) {
    auto params = model::init_params<double>(cfg, pooling, seeds(rng));
    for (auto& e : params.entries()) {
      if (e.name.ends_with("bn.gamma")) e.value = uniform(e.value.shape(), rng, 0.5, 1.5);
      if (e.name.ends_with("bn.beta")) e.value = uniform(e.value.shape(), rng, -0.3, 0.3);
    }
    const T features = uniform({batch, cfg.n_frames, cfg.n_mels}, rng, -2, 2);
    const auto base = model::forward(cfg, params, features, pooling, nn::Mode::train);
    if (model::kink_margin(base) < kKinkMargin) continue;
    const auto pattern = kink_pattern(base);

    const auto& out = base.output;
    model::OutputGrads<double> r{upstream(out.scene_probs.shape(), rng), upstream(out.frame_probs.shape(), rng),
                                 upstream(out.bag_probs.shape(), rng)};
    const auto grads = model::backward(cfg, params, base.cache, r);
    std::vector<Probe> probes;
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (params.entries()[k].trainable) probes.push_back({&params.entries()[k].value, grads.entries()[k].value});
    }
    bool crossed = false;
    const double worst = compare(
        [&] {
          const auto f = model::forward(cfg, params, features, pooling, nn::Mode::train);
          crossed = crossed || kink_pattern(f) != pattern;
          const auto& o = f.output;
          return dot(r.scene_probs, o.scene_probs) + dot(r.frame_probs, o.frame_probs) + dot(r.bag_probs, o.bag_probs);
        },
        std::move(probes));
    if (!crossed) return worst;
  }
  throw NumericsError("gradcheck model_tiny: no draw stayed clear of every kink");
}

using CheckFn = std::function<double(Rng&)>;

const std::vector<std::pair<std::string, CheckFn>>& registry() {
  using milpool::PoolingKind;
  static const std::vector<std::pair<std::string, CheckFn>> ops = {
      {"conv2d", check_conv2d},
      {"batch_norm_train", [](Rng& r) { return check_batch_norm(r, nn::Mode::train); }},
      {"batch_norm_eval", [](Rng& r) { return check_batch_norm(r, nn::Mode::eval); }},
      {"leaky_relu", check_leaky_relu},
      {"max_pool2d", check_max_pool2d},
      {"global_max_pool", check_global_max_pool},
      {"gru_bidirectional", check_gru},
      {"linear", check_linear},
      {"softmax", check_softmax},
      {"sigmoid", check_sigmoid},
      {"pool_mp", [](Rng& r) { return check_pool(r, PoolingKind::max); }},
      {"pool_ap", [](Rng& r) { return check_pool(r, PoolingKind::average); }},
      {"pool_es", [](Rng& r) { return check_pool(r, PoolingKind::exp_softmax); }},
      {"pool_at", [](Rng& r) { return check_pool(r, PoolingKind::attention); }},
      {"loss_scene_ce", check_scene_ce},
      {"loss_event_strong", check_event_strong},
      {"loss_event_weak", check_event_weak},
      {"model_tiny", check_model},
  };
  return ops;
}

const CheckFn& lookup(const std::string& op) {
  for (const auto& [name, fn] : registry()) {
    if (name == op) return fn;
  }
  std::string known;
  for (const auto& [name, fn] : registry()) known += (known.empty() ? "" : ", ") + name;
  throw InvalidInput("unknown gradcheck op '" + op + "' (known: " + known + ")");
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

std::vector<std::string> registered_ops() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

double tolerance(const std::string& op) {
  lookup(op);
  return op == "model_tiny" ? kModelTolerance : kKernelTolerance;
}

double grad_check(const std::string& op, std::uint64_t seed) {
  const CheckFn& fn = lookup(op);
  std::seed_seq seq(op.begin(), op.end());
  std::vector<std::uint32_t> mixed(2);
  seq.generate(mixed.begin(), mixed.end());
  Rng rng((static_cast<std::uint64_t>(mixed[0]) << 32 | mixed[1]) ^ (seed * 0x9e3779b97f4a7c15ULL));
  return fn(rng);
}

OpReport check_op(const std::string& op, std::size_t n_seeds, std::uint64_t first_seed) {
  OpReport report{op, 0.0, tolerance(op), n_seeds};
  for (std::size_t s = 0; s < n_seeds; ++s) {
    report.max_rel_error = std::max(report.max_rel_error, grad_check(op, first_seed + s));
  }
  return report;
}

}  // namespace mtlsed::gradcheck
