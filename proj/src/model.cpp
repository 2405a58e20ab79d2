#include "mtlsed/model.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "mtlsed/nn/activation.hpp"
#include "mtlsed/nn/conv.hpp"
#include "mtlsed/nn/linear.hpp"
#include "mtlsed/nn/pooling.hpp"

namespace mtlsed::model {

// ---------------------------------------------------------------------------
// ArchConfig

std::size_t ArchConfig::scaled(std::size_t width) const {
  if (scale_factor == 1.0) return width;
  const auto w = static_cast<std::size_t>(std::llround(static_cast<double>(width) * scale_factor));
  return std::max<std::size_t>(w, 4);
}

std::size_t ArchConfig::pooled_freq() const {
  std::size_t f = n_mels;
  for (std::size_t p : shared_freq_pools) f /= p;
  return f;
}

ArchConfig ArchConfig::tiny() {
  ArchConfig c;
  c.n_mels = 8;
  c.n_frames = 8;
  c.shared_channels = 4;
  c.scene_channels = 4;
  c.gru_hidden = 4;
  c.fc_hidden = 4;
  c.n_scenes = 3;
  c.n_events = 3;
  c.shared_freq_pools = {2, 2, 2};
  c.scene_time_pool = 2;
  return c;
}

void ArchConfig::validate() const {
  for (std::size_t v : {n_mels, n_frames, shared_channels, scene_channels, gru_hidden, fc_hidden, n_scenes,
                        n_events, scene_time_pool}) {
    if (v == 0) throw InvalidConfig("architecture sizes must be positive");
  }
  if (!(scale_factor > 0) || !std::isfinite(scale_factor)) throw InvalidConfig("scale_factor must be positive");
  std::size_t f = n_mels;
  for (std::size_t p : shared_freq_pools) {
    if (p == 0 || f % p != 0) {
      throw InvalidConfig("n_mels " + std::to_string(n_mels) + " is not divisible by the shared frequency pooling");
    }
    f /= p;
  }
  if (n_frames % scene_time_pool != 0) {
    throw InvalidConfig("n_frames " + std::to_string(n_frames) + " is not divisible by scene_time_pool " +
                        std::to_string(scene_time_pool));
  }
}

ShapeTrace shape_trace(const ArchConfig& cfg) {
  cfg.validate();
  ShapeTrace s;
  s.input = {cfg.n_frames, cfg.n_mels};
  s.shared_output = {cfg.shared_width(), cfg.n_frames, cfg.pooled_freq()};
  s.scene_pooled_time = cfg.n_frames / cfg.scene_time_pool;
  s.scene_output = {cfg.n_scenes};
  s.event_features = {cfg.n_frames, 2 * cfg.gru_width()};
  s.frame_logits = {cfg.n_frames, cfg.n_events};
  s.bag_logits = {cfg.n_events};
  return s;
}

// ---------------------------------------------------------------------------
// ParamSet

template <typename Real>
void ParamSet<Real>::add(std::string name, Tensor<Real> value, bool trainable) {
  if (contains(name)) throw InvalidInput("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), trainable});
}

template <typename Real>
Tensor<Real>& ParamSet<Real>::operator[](const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("missing parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename Real>
const Tensor<Real>& ParamSet<Real>::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("missing parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename Real>
std::size_t ParamSet<Real>::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename Real>
ParamSet<Real> ParamSet<Real>::zeros_like() const {
  ParamSet out;
  for (const auto& e : entries_) out.add(e.name, Tensor<Real>(e.value.shape()), e.trainable);
  return out;
}

template <typename Real>
bool ParamSet<Real>::operator==(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.trainable != b.trainable || a.value != b.value) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Parameter layout and initialisation

namespace {

struct ArraySpec {
  std::string name;
  Shape shape;
  enum class Init { glorot, zero, one } init;
  bool trainable = true;
  std::size_t fan_in = 0, fan_out = 0;
};

void add_conv_block(std::vector<ArraySpec>& out, const std::string& prefix, std::size_t cin, std::size_t cout) {
  out.push_back({prefix + "conv.weight", {cout, cin, 3, 3}, ArraySpec::Init::glorot, true, cin * 9, cout * 9});
  out.push_back({prefix + "bn.gamma", {cout}, ArraySpec::Init::one});
  out.push_back({prefix + "bn.beta", {cout}, ArraySpec::Init::zero});
  out.push_back({prefix + "bn.running_mean", {cout}, ArraySpec::Init::zero, false});
  out.push_back({prefix + "bn.running_var", {cout}, ArraySpec::Init::one, false});
}

void add_linear(std::vector<ArraySpec>& out, const std::string& prefix, std::size_t in, std::size_t units) {
  out.push_back({prefix + ".weight", {units, in}, ArraySpec::Init::glorot, true, in, units});
  out.push_back({prefix + ".bias", {units}, ArraySpec::Init::zero});
}

void add_gru(std::vector<ArraySpec>& out, const std::string& prefix, std::size_t in, std::size_t h) {
  out.push_back({prefix + ".w_input", {3 * h, in}, ArraySpec::Init::glorot, true, in, 3 * h});
  out.push_back({prefix + ".w_hidden", {3 * h, h}, ArraySpec::Init::glorot, true, h, 3 * h});
  out.push_back({prefix + ".bias", {3 * h}, ArraySpec::Init::zero});
}

std::vector<ArraySpec> layout(const ArchConfig& cfg, std::optional<PoolingKind> pooling) {
  cfg.validate();
  const std::size_t c = cfg.shared_width(), s = cfg.scene_width(), h = cfg.gru_width(), fc = cfg.fc_width();
  std::vector<ArraySpec> out;
  add_conv_block(out, "shared.block0.", 1, c);
  add_conv_block(out, "shared.block1.", c, c);
  add_conv_block(out, "shared.block2.", c, c);
  add_conv_block(out, "scene.block0.", c, s);
  add_conv_block(out, "scene.block1.", s, s);
  add_linear(out, "scene.fc0", s, fc);
  add_linear(out, "scene.fc1", fc, cfg.n_scenes);
  add_gru(out, "event.gru.forward", cfg.event_input_dim(), h);
  add_gru(out, "event.gru.backward", cfg.event_input_dim(), h);
  add_linear(out, "event.fc0", 2 * h, fc);
  add_linear(out, "event.fc1", fc, cfg.n_events);
  if (pooling == PoolingKind::attention) add_linear(out, "event.attention", 2 * h, cfg.n_events);
  return out;
}

}  // namespace

template <typename Real>
ModelParams<Real> init_params(const ArchConfig& cfg, std::optional<PoolingKind> pooling, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams<Real> params;
  for (const ArraySpec& spec : layout(cfg, pooling)) {
    Tensor<Real> t(spec.shape);
    switch (spec.init) {
      case ArraySpec::Init::glorot: {
        const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Real& v : t.values()) v = static_cast<Real>(dist(rng));
        break;
      }
      case ArraySpec::Init::one: t.fill(Real(1)); break;
      case ArraySpec::Init::zero: break;
    }
    params.add(spec.name, std::move(t), spec.trainable);
  }
  return params;
}

template <typename Real>
void check_params(const ArchConfig& cfg, std::optional<PoolingKind> pooling, const ModelParams<Real>& params) {
  const auto specs = layout(cfg, pooling);
  for (const ArraySpec& spec : specs) {
    require_shape(params[spec.name], spec.shape, spec.name.c_str());
  }
  if (params.size() != specs.size()) {
    throw ShapeError("parameter set has " + std::to_string(params.size()) + " arrays, architecture expects " +
                     std::to_string(specs.size()));
  }
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename Real>
nn::GruDirection<Real> gru_direction(const ModelParams<Real>& p, const std::string& prefix) {
  return {p[prefix + ".w_input"], p[prefix + ".w_hidden"], p[prefix + ".bias"]};
}

// conv (no bias) -> batch norm -> leaky ReLU -> optional max pool.
template <typename Real>
Tensor<Real> conv_block_forward(const ModelParams<Real>& p, const std::string& prefix, const Tensor<Real>& x,
                                Mode mode, std::size_t pool_t, std::size_t pool_f, bool global_pool,
                                ConvBlockCache<Real>& cache, std::map<std::string, Tensor<Real>>& updates) {
  cache.input = x;
  const Tensor<Real> conv = nn::conv2d_forward(x, p[prefix + "conv.weight"]);
  auto bn = nn::batch_norm_forward(conv, p[prefix + "bn.gamma"], p[prefix + "bn.beta"],
                                   p[prefix + "bn.running_mean"], p[prefix + "bn.running_var"], mode);
  if (mode == Mode::train) {
    Tensor<Real> mean = p[prefix + "bn.running_mean"];
    Tensor<Real> var = p[prefix + "bn.running_var"];
    nn::update_running_stats(mean, var, bn.batch_mean, bn.batch_var);
    updates[prefix + "bn.running_mean"] = std::move(mean);
    updates[prefix + "bn.running_var"] = std::move(var);
  }
  cache.bn = std::move(bn.cache);
  cache.pre_activation = std::move(bn.y);
  const Tensor<Real> act = nn::leaky_relu_forward(cache.pre_activation);
  cache.pool_input_shape = act.shape();
  cache.pool_t = global_pool ? 0 : pool_t;
  cache.pool_f = global_pool ? 0 : pool_f;
  auto pooled = global_pool ? nn::global_max_pool_forward(act) : nn::max_pool2d_forward(act, pool_t, pool_f);
  cache.argmax = std::move(pooled.argmax);
  return std::move(pooled.y);
}

template <typename Real>
Tensor<Real> conv_block_backward(const ModelParams<Real>& p, const std::string& prefix,
                                 const ConvBlockCache<Real>& cache, const Tensor<Real>& grad_out,
                                 ModelParams<Real>& grads) {
  const Tensor<Real> d_act = nn::max_pool2d_backward(cache.pool_input_shape, cache.argmax, grad_out);
  const Tensor<Real> d_pre = nn::leaky_relu_backward(cache.pre_activation, d_act);
  auto bn = nn::batch_norm_backward(cache.bn, p[prefix + "bn.gamma"], d_pre);
  accumulate(grads[prefix + "bn.gamma"], bn.gamma);
  accumulate(grads[prefix + "bn.beta"], bn.beta);
  auto conv = nn::conv2d_backward(cache.input, p[prefix + "conv.weight"], bn.input, false);
  accumulate(grads[prefix + "conv.weight"], conv.weight);
  return std::move(conv.input);
}

// (N, C, T, F) -> (T, C*F) for batch item n.
template <typename Real>
Tensor<Real> frame_features(const Tensor<Real>& shared, std::size_t n) {
  const std::size_t c = shared.dim(1), t = shared.dim(2), f = shared.dim(3);
  Tensor<Real> x({t, c * f});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t tt = 0; tt < t; ++tt) {
      for (std::size_t ff = 0; ff < f; ++ff) x.at(tt, ch * f + ff) = shared.at(n, ch, tt, ff);
    }
  }
  return x;
}

template <typename Real>
void scatter_frame_features(const Tensor<Real>& dx, std::size_t n, Tensor<Real>& d_shared) {
  const std::size_t c = d_shared.dim(1), t = d_shared.dim(2), f = d_shared.dim(3);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t tt = 0; tt < t; ++tt) {
      for (std::size_t ff = 0; ff < f; ++ff) d_shared.at(n, ch, tt, ff) += dx.at(tt, ch * f + ff);
    }
  }
}

// Rows [n*T, (n+1)*T) of a (N*T, M) matrix.
template <typename Real>
Tensor<Real> item_rows(const Tensor<Real>& m, std::size_t n, std::size_t steps) {
  const std::size_t w = m.dim(1);
  std::vector<Real> v(m.data() + n * steps * w, m.data() + (n + 1) * steps * w);
  return Tensor<Real>({steps, w}, std::move(v));
}

}  // namespace

template <typename Real>
ForwardResult<Real> forward(const ArchConfig& cfg, const ModelParams<Real>& params, const Tensor<Real>& features,
                            std::optional<PoolingKind> pooling, Mode mode, Branches branches) {
  const ShapeTrace trace = shape_trace(cfg);
  require_rank(features, 3, "model features");
  if (features.dim(0) == 0) throw InvalidInput("model forward: empty batch");
  if (Shape{features.dim(1), features.dim(2)} != trace.input) {
    throw ShapeError("model forward: features " + shape_string(features.shape()) + " do not match architecture input " +
                     shape_string(trace.input));
  }
  if (pooling == PoolingKind::attention && !params.contains("event.attention.weight")) {
    throw ShapeError("attention pooling requires the attention head parameters");
  }

  const std::size_t batch = features.dim(0), steps = cfg.n_frames, classes = cfg.n_events;
  ForwardResult<Real> res;
  auto& cache = res.cache;
  cache.branches = branches;
  cache.pooling = pooling;
  cache.batch = batch;

  Tensor<Real> x = features.reshaped({batch, 1, steps, cfg.n_mels});
  for (std::size_t i = 0; i < 3; ++i) {
    x = conv_block_forward(params, "shared.block" + std::to_string(i) + ".", x, mode, 1, cfg.shared_freq_pools[i],
                           false, cache.shared[i], res.running_updates);
  }
  if (Shape(x.shape().begin() + 1, x.shape().end()) != trace.shared_output) {
    throw ShapeError("shared output " + shape_string(x.shape()) + " breaks the shape contract");
  }
  cache.shared_output = x;

  auto& out = res.output;
  if (branches.scene) {
    Tensor<Real> s = conv_block_forward(params, "scene.block0.", x, mode, cfg.scene_time_pool, 1, false,
                                        cache.scene[0], res.running_updates);
    if (s.dim(2) != trace.scene_pooled_time) throw ShapeError("scene time pooling breaks the shape contract");
    s = conv_block_forward(params, "scene.block1.", s, mode, 0, 0, true, cache.scene[1], res.running_updates);
    cache.scene_embedding = s;
    cache.scene_fc0_pre = nn::linear_forward(s, params["scene.fc0.weight"], params["scene.fc0.bias"]);
    cache.scene_fc0_out = nn::leaky_relu_forward(cache.scene_fc0_pre);
    const Tensor<Real> logits =
        nn::linear_forward(cache.scene_fc0_out, params["scene.fc1.weight"], params["scene.fc1.bias"]);
    out.scene_probs = nn::softmax_forward(logits);
  }

  if (branches.event) {
    const auto fwd = gru_direction(params, "event.gru.forward");
    const auto bwd = gru_direction(params, "event.gru.backward");
    const std::size_t h2 = 2 * cfg.gru_width();
    cache.gru_output = Tensor<Real>({batch * steps, h2});
    cache.gru.resize(batch);
    for (std::size_t n = 0; n < batch; ++n) {
      auto g = nn::bigru_forward(frame_features(x, n), fwd, bwd);
      std::copy(g.y.storage().begin(), g.y.storage().end(), cache.gru_output.data() + n * steps * h2);
      cache.gru[n] = std::move(g.cache);
    }
    cache.event_fc0_pre = nn::linear_forward(cache.gru_output, params["event.fc0.weight"], params["event.fc0.bias"]);
    cache.event_fc0_out = nn::leaky_relu_forward(cache.event_fc0_pre);
    const Tensor<Real> logits =
        nn::linear_forward(cache.event_fc0_out, params["event.fc1.weight"], params["event.fc1.bias"]);
    out.frame_logits = logits.reshaped({batch, steps, classes});
    out.frame_probs = nn::sigmoid_forward(out.frame_logits);

    if (pooling) {
      if (*pooling == PoolingKind::attention) {
        cache.attention_logits =
            nn::linear_forward(cache.gru_output, params["event.attention.weight"], params["event.attention.bias"]);
      }
      out.bag_logits = Tensor<Real>({batch, classes});
      for (std::size_t n = 0; n < batch; ++n) {
        const Tensor<Real> item = item_rows(logits, n, steps);
        Tensor<Real> att;
        if (*pooling == PoolingKind::attention) att = item_rows(cache.attention_logits, n, steps);
        const Tensor<Real> y =
            milpool::pool(*pooling, item, *pooling == PoolingKind::attention ? &att : nullptr);
        std::copy(y.storage().begin(), y.storage().end(), out.bag_logits.data() + n * classes);
      }
      out.bag_probs = nn::sigmoid_forward(out.bag_logits);
    }
  }
  return res;
}

template <typename Real>
ForwardResult<Real> forward_single_task(const ArchConfig& cfg, const ModelParams<Real>& params,
                                        const Tensor<Real>& features, Task task,
                                        std::optional<PoolingKind> pooling, Mode mode) {
  const Branches b{task == Task::asc, task == Task::sed};
  return forward(cfg, params, features, task == Task::sed ? pooling : std::nullopt, mode, b);
}

// ---------------------------------------------------------------------------
// Backward

template <typename Real>
ModelParams<Real> backward(const ArchConfig& cfg, const ModelParams<Real>& params, const ForwardCache<Real>& cache,
                           const OutputGrads<Real>& grads) {
  ModelParams<Real> g = params.zeros_like();
  const std::size_t batch = cache.batch, steps = cfg.n_frames, classes = cfg.n_events;
  Tensor<Real> d_shared(cache.shared_output.shape());
  bool any = false;

  if (cache.branches.scene && !grads.scene_probs.empty()) {
    any = true;
    // Recompute the softmax output from the cached pre-softmax path.
    const Tensor<Real> logits =
        nn::linear_forward(cache.scene_fc0_out, params["scene.fc1.weight"], params["scene.fc1.bias"]);
    const Tensor<Real> probs = nn::softmax_forward(logits);
    const Tensor<Real> d_logits = nn::softmax_backward(probs, grads.scene_probs);
    auto fc1 = nn::linear_backward(cache.scene_fc0_out, params["scene.fc1.weight"], d_logits);
    accumulate(g["scene.fc1.weight"], fc1.weight);
    accumulate(g["scene.fc1.bias"], fc1.bias);
    const Tensor<Real> d_pre = nn::leaky_relu_backward(cache.scene_fc0_pre, fc1.input);
    auto fc0 = nn::linear_backward(cache.scene_embedding, params["scene.fc0.weight"], d_pre);
    accumulate(g["scene.fc0.weight"], fc0.weight);
    accumulate(g["scene.fc0.bias"], fc0.bias);
    Tensor<Real> d = conv_block_backward(params, "scene.block1.", cache.scene[1], fc0.input, g);
    d = conv_block_backward(params, "scene.block0.", cache.scene[0], d, g);
    accumulate(d_shared, d);
  }

  const bool frame_grad = !grads.frame_probs.empty();
  const bool bag_grad = !grads.bag_probs.empty() && cache.pooling.has_value();
  if (cache.branches.event && (frame_grad || bag_grad)) {
    any = true;
    const std::size_t h2 = 2 * cfg.gru_width();
    const Tensor<Real> logits =
        nn::linear_forward(cache.event_fc0_out, params["event.fc1.weight"], params["event.fc1.bias"]);
    Tensor<Real> d_logits({batch * steps, classes});
    if (frame_grad) {
      require_shape(grads.frame_probs, {batch, steps, classes}, "frame probability gradient");
      const Tensor<Real> probs = nn::sigmoid_forward(logits);
      d_logits = nn::sigmoid_backward(probs, grads.frame_probs.reshaped({batch * steps, classes}));
    }
    Tensor<Real> d_gru({batch * steps, h2});
    if (bag_grad) {
      require_shape(grads.bag_probs, {batch, classes}, "bag probability gradient");
      const bool attention = *cache.pooling == PoolingKind::attention;
      Tensor<Real> d_att;
      if (attention) d_att = Tensor<Real>({batch * steps, classes});
      for (std::size_t n = 0; n < batch; ++n) {
        const Tensor<Real> item = item_rows(logits, n, steps);
        Tensor<Real> att;
        if (attention) att = item_rows(cache.attention_logits, n, steps);
        const Tensor<Real>* att_ptr = attention ? &att : nullptr;
        const Tensor<Real> bag = milpool::pool(*cache.pooling, item, att_ptr);
        const Tensor<Real> bag_probs = nn::sigmoid_forward(bag);
        Tensor<Real> d_bag_probs({classes});
        for (std::size_t m = 0; m < classes; ++m) d_bag_probs[m] = grads.bag_probs.at(n, m);
        const Tensor<Real> d_bag = nn::sigmoid_backward(bag_probs, d_bag_probs);
        auto pg = milpool::pool_backward(*cache.pooling, item, att_ptr, bag, d_bag);
        for (std::size_t i = 0; i < steps * classes; ++i) {
          d_logits[n * steps * classes + i] += pg.frame_logits[i];
          if (attention) d_att[n * steps * classes + i] = pg.attention_logits[i];
        }
      }
      if (attention) {
        auto ag = nn::linear_backward(cache.gru_output, params["event.attention.weight"], d_att);
        accumulate(g["event.attention.weight"], ag.weight);
        accumulate(g["event.attention.bias"], ag.bias);
        accumulate(d_gru, ag.input);
      }
    }
    auto fc1 = nn::linear_backward(cache.event_fc0_out, params["event.fc1.weight"], d_logits);
    accumulate(g["event.fc1.weight"], fc1.weight);
    accumulate(g["event.fc1.bias"], fc1.bias);
    const Tensor<Real> d_pre = nn::leaky_relu_backward(cache.event_fc0_pre, fc1.input);
    auto fc0 = nn::linear_backward(cache.gru_output, params["event.fc0.weight"], d_pre);
    accumulate(g["event.fc0.weight"], fc0.weight);
    accumulate(g["event.fc0.bias"], fc0.bias);
    accumulate(d_gru, fc0.input);

    const auto fwd = gru_direction(params, "event.gru.forward");
    const auto bwd = gru_direction(params, "event.gru.backward");
    for (std::size_t n = 0; n < batch; ++n) {
      const Tensor<Real> dy = item_rows(d_gru, n, steps);
      auto gg = nn::bigru_backward(cache.gru[n], fwd, bwd, dy);
      accumulate(g["event.gru.forward.w_input"], gg.forward.w_input);
      accumulate(g["event.gru.forward.w_hidden"], gg.forward.w_hidden);
      accumulate(g["event.gru.forward.bias"], gg.forward.bias);
      accumulate(g["event.gru.backward.w_input"], gg.backward.w_input);
      accumulate(g["event.gru.backward.w_hidden"], gg.backward.w_hidden);
      accumulate(g["event.gru.backward.bias"], gg.backward.bias);
      scatter_frame_features(gg.input, n, d_shared);
    }
  }

  if (!any) return g;
  Tensor<Real> d = d_shared;
  for (int i = 2; i >= 0; --i) {
    d = conv_block_backward(params, "shared.block" + std::to_string(i) + ".", cache.shared[static_cast<std::size_t>(i)],
                            d, g);
  }
  return g;
}

template <typename Real>
void apply_running_updates(ModelParams<Real>& params, const ForwardResult<Real>& result) {
  for (const auto& [name, value] : result.running_updates) params[name] = value;
}

template <typename Real>
double kink_margin(const ForwardResult<Real>& result) {
  const auto& c = result.cache;
  double margin = std::numeric_limits<double>::infinity();
  auto scan_relu = [&](const Tensor<Real>& pre) {
    for (Real v : pre.values()) margin = std::min(margin, std::abs(static_cast<double>(v)));
  };
  // Gap between each window's winner and the others. Leaky ReLU is strictly
  // increasing, so the winner only changes where pre-activations cross.
  auto scan_pool = [&](const ConvBlockCache<Real>& b) {
    const Tensor<Real>& act = b.pre_activation;
    const std::size_t t = act.dim(2), f = act.dim(3);
    const std::size_t wt = b.pool_t ? b.pool_t : t, wf = b.pool_f ? b.pool_f : f;
    for (std::size_t win : b.argmax) {
      const std::size_t plane = win / (t * f);
      const std::size_t r = (win % (t * f)) / f, col = win % f;
      const std::size_t r0 = r - r % wt, c0 = col - col % wf;
      for (std::size_t a = 0; a < wt; ++a) {
        for (std::size_t bb = 0; bb < wf; ++bb) {
          const std::size_t idx = plane * t * f + (r0 + a) * f + c0 + bb;
          if (idx != win) {
            margin = std::min(margin, static_cast<double>(act[win]) - static_cast<double>(act[idx]));
          }
        }
      }
    }
  };
  for (const auto& b : c.shared) {
    scan_relu(b.pre_activation);
    scan_pool(b);
  }
  if (c.branches.scene) {
    for (const auto& b : c.scene) {
      scan_relu(b.pre_activation);
      scan_pool(b);
    }
    scan_relu(c.scene_fc0_pre);
  }
  if (c.branches.event) {
    scan_relu(c.event_fc0_pre);
    if (c.pooling == PoolingKind::max) {
      const auto& fl = result.output.frame_logits;
      const std::size_t n = fl.dim(0), t = fl.dim(1), m = fl.dim(2);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < m; ++k) {
          double best = -std::numeric_limits<double>::infinity(), second = best;
          for (std::size_t s = 0; s < t; ++s) {
            const double v = fl.at(i, s, k);
            if (v > best) {
              second = best;
              best = v;
            } else if (v > second) {
              second = v;
            }
          }
          if (t > 1) margin = std::min(margin, best - second);
        }
      }
    }
  }
  return margin;
}

#define MTLSED_INSTANTIATE(Real)                                                                                 \
  template class ParamSet<Real>;                                                                                 \
  template ModelParams<Real> init_params<Real>(const ArchConfig&, std::optional<PoolingKind>, std::uint64_t);    \
  template void check_params<Real>(const ArchConfig&, std::optional<PoolingKind>, const ModelParams<Real>&);     \
  template ForwardResult<Real> forward<Real>(const ArchConfig&, const ModelParams<Real>&, const Tensor<Real>&,  \
                                             std::optional<PoolingKind>, Mode, Branches);                        \
  template ForwardResult<Real> forward_single_task<Real>(const ArchConfig&, const ModelParams<Real>&,           \
                                                         const Tensor<Real>&, Task, std::optional<PoolingKind>,  \
                                                         Mode);                                                  \
  template ModelParams<Real> backward<Real>(const ArchConfig&, const ModelParams<Real>&, const ForwardCache<Real>&, \
                                            const OutputGrads<Real>&);                                           \
  template void apply_running_updates<Real>(ModelParams<Real>&, const ForwardResult<Real>&);                    \
  template double kink_margin<Real>(const ForwardResult<Real>&);

MTLSED_INSTANTIATE(float)
MTLSED_INSTANTIATE(double)

#undef MTLSED_INSTANTIATE

}  // namespace mtlsed::model
