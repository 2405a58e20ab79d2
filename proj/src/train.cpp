#include "mtlsed/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace mtlsed::train {

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::mtl_weak: return "mtl-weak";
    case TrainMode::mtl_strong: return "mtl-strong";
    case TrainMode::asc_only: return "asc-only";
    case TrainMode::sed_only: return "sed-only";
  }
  return "?";
}

TrainMode parse_mode(std::string_view text) {
  for (TrainMode m : {TrainMode::mtl_weak, TrainMode::mtl_strong, TrainMode::asc_only, TrainMode::sed_only}) {
    if (text == to_string(m)) return m;
  }
  throw InvalidConfig("unknown mode '" + std::string(text) + "' (expected mtl-weak, mtl-strong, asc-only, sed-only)");
}

data::TargetSelection targets_for(TrainMode mode) {
  switch (mode) {
    case TrainMode::mtl_weak: return {true, true, false};
    case TrainMode::mtl_strong: return {true, false, true};
    case TrainMode::asc_only: return {true, false, false};
    case TrainMode::sed_only: return {false, true, false};
  }
  return {};
}

namespace {

bool uses_scene(TrainMode m) { return m != TrainMode::sed_only; }
bool uses_event(TrainMode m) { return m != TrainMode::asc_only; }
bool uses_bag(TrainMode m) { return m == TrainMode::mtl_weak || m == TrainMode::sed_only; }

model::Branches branches_for(TrainMode m) { return {uses_scene(m), uses_event(m)}; }

Tensor<float> slice(const Tensor<float>& t, std::size_t n) {
  Shape inner(t.shape().begin() + 1, t.shape().end());
  Tensor<float> out(inner);
  const std::size_t count = out.size();
  std::copy(t.data() + n * count, t.data() + (n + 1) * count, out.data());
  return out;
}

void store(Tensor<float>& dst, std::size_t n, const Tensor<float>& src, float scale) {
  const std::size_t count = src.size();
  for (std::size_t i = 0; i < count; ++i) dst.data()[n * count + i] = scale * src[i];
}

}  // namespace

std::optional<PoolingKind> effective_pooling(const TrainConfig& cfg) {
  return uses_bag(cfg.mode) ? cfg.pooling : std::nullopt;
}

void OptimizerConfig::validate() const {
  if (!(lr > 0)) throw InvalidConfig("lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw InvalidConfig("betas must lie in [0, 1)");
  if (!(eps > 0)) throw InvalidConfig("eps must be positive");
}

double radam_rho(double beta2, std::uint64_t step) {
  const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
  const double b2t = std::pow(beta2, static_cast<double>(step));
  return rho_inf - 2.0 * static_cast<double>(step) * b2t / (1.0 - b2t);
}

template <typename Real>
void optimizer_step(ModelParams<Real>& params, const ModelParams<Real>& grads, OptimizerState<Real>& state,
                    const OptimizerConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeError("optimizer_step: gradient set does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params.entries()[k];
    const auto& g = grads.entries()[k];
    if (p.name != g.name || p.value.shape() != g.value.shape()) {
      throw ShapeError("optimizer_step: gradient '" + g.name + "' does not match parameter '" + p.name + "'");
    }
    if (!p.trainable) continue;
    for (Real x : g.value.values()) {
      if (!std::isfinite(static_cast<double>(x))) throw NumericsError("non-finite gradient in parameter " + p.name);
    }
  }
  if (state.m.size() == 0) {
    state.m = params.zeros_like();
    state.v = params.zeros_like();
  }
  const std::uint64_t t = ++state.step;
  const double b1t = std::pow(cfg.beta1, static_cast<double>(t));
  const double b2t = std::pow(cfg.beta2, static_cast<double>(t));
  const double rho = radam_rho(cfg.beta2, t);
  const double rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
  const bool adaptive = !cfg.rectified || rho > 4.0;
  const double rect =
      cfg.rectified && adaptive
          ? std::sqrt((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
          : 1.0;

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params.entries()[k];
    if (!p.trainable) continue;
    const auto& g = grads.entries()[k].value;
    auto& m = state.m.entries()[k].value;
    auto& v = state.v.entries()[k].value;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double m_hat = mi / (1.0 - b1t);
      double update = m_hat;
      if (adaptive) update = rect * m_hat / (std::sqrt(vi / (1.0 - b2t)) + cfg.eps);
      p.value[i] = static_cast<Real>(static_cast<double>(p.value[i]) - cfg.lr * update);
    }
  }
}

template <typename Real>
double clip_grad_norm(ModelParams<Real>& grads, double max_norm) {
  double sq = 0;
  for (const auto& e : grads.entries()) {
    if (!e.trainable) continue;
    for (Real x : e.value.values()) sq += static_cast<double>(x) * static_cast<double>(x);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& e : grads.entries()) {
      if (!e.trainable) continue;
      for (Real& x : e.value.values()) x = static_cast<Real>(static_cast<double>(x) * scale);
    }
  }
  return norm;
}

template void optimizer_step<float>(ModelParams<float>&, const ModelParams<float>&, OptimizerState<float>&,
                                    const OptimizerConfig&);
template void optimizer_step<double>(ModelParams<double>&, const ModelParams<double>&, OptimizerState<double>&,
                                     const OptimizerConfig&);
template double clip_grad_norm<float>(ModelParams<float>&, double);
template double clip_grad_norm<double>(ModelParams<double>&, double);

void TrainConfig::validate() const {
  weights.validate();
  optimizer.validate();
  if (epochs == 0) throw InvalidConfig("epochs must be positive");
  if (batch_size == 0) throw InvalidConfig("batch_size must be positive");
  if (!(clip_norm >= 0)) throw InvalidConfig("clip_norm must be >= 0");
  if (!(eval_fraction > 0 && eval_fraction < 1)) throw InvalidConfig("eval_fraction must lie in (0, 1)");
  if (!(threshold > 0 && threshold < 1)) throw InvalidConfig("threshold must lie in (0, 1)");
}

LossParts mode_loss(TrainMode mode, const loss::LossWeights& w, bool use_bag, const model::ModelOutput<float>& out,
                    const data::Batch& batch, model::OutputGrads<float>* grads) {
  const std::size_t n = batch.size();
  const float inv_n = 1.0f / static_cast<float>(n);
  const bool multitask = mode == TrainMode::mtl_weak || mode == TrainMode::mtl_strong;
  const double scene_scale = multitask ? w.alpha : 1.0;
  const double event_scale = multitask ? w.beta : 1.0;
  LossParts parts;

  if (uses_scene(mode)) {
    if (!batch.scenes) throw InvalidInput("batch carries no scene labels");
    const std::size_t classes = out.scene_probs.dim(1);
    if (grads) grads->scene_probs = Tensor<float>(out.scene_probs.shape());
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> target(classes, 0.0f);
      target.at((*batch.scenes)[i]) = 1.0f;
      const std::span<const float> probs(out.scene_probs.data() + i * classes, classes);
      parts.scene += loss::scene_ce<float>(probs, target);
      if (grads) {
        const auto g = loss::scene_ce_grad<float>(probs, target);
        for (std::size_t c = 0; c < classes; ++c) {
          grads->scene_probs.at(i, c) = static_cast<float>(scene_scale) * inv_n * g[c];
        }
      }
    }
    parts.scene /= static_cast<double>(n);
  }

  if (uses_event(mode)) {
    if (grads) {
      grads->frame_probs = Tensor<float>(out.frame_probs.shape());
      if (use_bag && mode != TrainMode::mtl_strong) grads->bag_probs = Tensor<float>(out.bag_probs.shape());
    }
    const float g_scale = static_cast<float>(event_scale) * inv_n;
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor<float> frame = slice(out.frame_probs, i);
      if (mode == TrainMode::mtl_strong) {
        if (!batch.strong) throw InvalidInput("mtl-strong needs strong event rolls");
        const Tensor<float> roll = slice(*batch.strong, i);
        parts.event += loss::event_bce_strong(frame, roll);
        if (grads) store(grads->frame_probs, i, loss::event_bce_strong_grad(frame, roll), g_scale);
      } else {
        if (!batch.weak) throw InvalidInput("batch carries no weak event labels");
        const Tensor<float> weak = slice(*batch.weak, i);
        const Tensor<float> bag = use_bag ? slice(out.bag_probs, i) : Tensor<float>(weak.shape());
        const double zeta = use_bag ? w.zeta : 0.0;
        parts.event += loss::event_weak_loss(frame, bag, weak, w.gamma, zeta);
        if (grads) {
          const auto g = loss::event_weak_loss_grad(frame, bag, weak, w.gamma, zeta);
          store(grads->frame_probs, i, g.frame_probs, g_scale);
          if (use_bag) store(grads->bag_probs, i, g.bag_probs, g_scale);
        }
      }
    }
    parts.event /= static_cast<double>(n);
  }

  parts.total = scene_scale * parts.scene + event_scale * parts.event;
  return parts;
}

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "epoch,step,loss_total,loss_scene,loss_event,lr\n";
  char line[256];
  for (const LogRow& r : rows) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.step, r.loss_total, r.loss_scene,
                  r.loss_event, r.lr);
    os << line;
  }
}

Trainer::Trainer(const ArchConfig& arch_, const TrainConfig& cfg_)
    : arch(arch_), cfg(cfg_), params(model::init_params<float>(arch_, effective_pooling(cfg_), cfg_.seed)) {
  arch.validate();
  cfg.validate();
}

LossParts Trainer::step(const data::Batch& batch) {
  const auto pooling = effective_pooling(cfg);
  auto fwd = model::forward(arch, params, batch.features, pooling, model::Mode::train, branches_for(cfg.mode));
  model::OutputGrads<float> og;
  const LossParts parts = mode_loss(cfg.mode, cfg.weights, pooling.has_value(), fwd.output, batch, &og);
  if (!std::isfinite(parts.total)) {
    throw NumericsError("non-finite loss at step " + std::to_string(state.step + 1) + " (scene " +
                        std::to_string(parts.scene) + ", event " + std::to_string(parts.event) + ")");
  }
  auto grads = model::backward(arch, params, fwd.cache, og);
  clip_grad_norm(grads, cfg.clip_norm);
  optimizer_step(params, grads, state, cfg.optimizer);
  model::apply_running_updates(params, fwd);
  return parts;
}

double eval_loss(const ArchConfig& arch, const TrainConfig& cfg, const ModelParams<float>& params,
                 const data::Dataset& ds) {
  const auto pooling = effective_pooling(cfg);
  double total = 0;
  for (const auto& idx : data::epoch_batches(ds.size(), cfg.batch_size, 0, 0, false)) {
    const data::Batch batch = data::assemble_batch(ds, idx, targets_for(cfg.mode));
    const auto fwd = model::forward(arch, params, batch.features, pooling, model::Mode::eval, branches_for(cfg.mode));
    total += mode_loss(cfg.mode, cfg.weights, pooling.has_value(), fwd.output, batch, nullptr).total *
             static_cast<double>(batch.size());
  }
  return total / static_cast<double>(ds.size());
}

metrics::MetricsReport evaluate(const ArchConfig& arch, std::optional<PoolingKind> pooling,
                                const ModelParams<float>& params, const data::Dataset& ds, double threshold,
                                std::size_t batch_size) {
  if (ds.size() == 0) throw InvalidInput("evaluate: empty dataset");
  model::check_params(arch, pooling, params);
  const std::size_t classes = arch.n_events, steps = arch.n_frames;
  if (ds.vocab.events.size() != classes || ds.vocab.scenes.size() != arch.n_scenes) {
    throw ShapeError("evaluate: vocabulary (" + std::to_string(ds.vocab.scenes.size()) + " scenes, " +
                     std::to_string(ds.vocab.events.size()) + " events) does not match the model (" +
                     std::to_string(arch.n_scenes) + ", " + std::to_string(classes) + ")");
  }
  std::vector<std::size_t> predicted, truth;
  metrics::BinaryRoll pred_roll({ds.size() * steps, classes}), true_roll({ds.size() * steps, classes});
  std::size_t row = 0;
  for (const auto& idx : data::epoch_batches(ds.size(), batch_size, 0, 0, false)) {
    const data::Batch batch = data::assemble_batch(ds, idx, {true, false, true});
    if (batch.features.dim(1) != arch.n_frames || batch.features.dim(2) != arch.n_mels) {
      throw ShapeError("evaluate: features " + shape_string(batch.features.shape()) + " do not match the model input " +
                       shape_string({arch.n_frames, arch.n_mels}));
    }
    const auto fwd = model::forward(arch, params, batch.features, pooling, model::Mode::eval);
    const auto& out = fwd.output;
    const std::size_t scenes = out.scene_probs.dim(1);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const float* p = out.scene_probs.data() + i * scenes;
      predicted.push_back(static_cast<std::size_t>(std::max_element(p, p + scenes) - p));
      truth.push_back((*batch.scenes)[i]);
      for (std::size_t t = 0; t < steps; ++t, ++row) {
        for (std::size_t m = 0; m < classes; ++m) {
          pred_roll.at(row, m) = static_cast<double>(out.frame_probs.at(i, t, m)) >= threshold ? 1 : 0;
          true_roll.at(row, m) = batch.strong->at(i, t, m) != 0.0f ? 1 : 0;
        }
      }
    }
  }
  const auto scene = metrics::scene_scores(predicted, truth, arch.n_scenes);
  const auto event = metrics::event_frame_scores(pred_roll, true_roll);
  metrics::MetricsReport r;
  r.scene_micro_f = scene.micro_f;
  r.scene_macro_f = scene.macro_f;
  r.event_micro_f = event.micro_f;
  r.event_macro_f = event.macro_f;
  for (std::size_t m = 0; m < classes; ++m) r.per_event_f[ds.vocab.events[m]] = event.per_class_f[m];
  return r;
}

TrainResult train_loop(const data::Dataset& train_set, const data::Dataset* eval_set, const ArchConfig& arch,
                       const TrainConfig& cfg, const StepCallback& on_step) {
  if (train_set.size() == 0) throw InvalidInput("empty training set");
  Trainer trainer(arch, cfg);
  TrainResult result;
  bool have_best = false;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : data::epoch_batches(train_set.size(), cfg.batch_size, cfg.seed, epoch, true)) {
      const data::Batch batch = data::assemble_batch(train_set, idx, targets_for(cfg.mode));
      const LossParts parts = trainer.step(batch);
      LogRow row{epoch + 1, ++step, parts.total, parts.scene, parts.event, cfg.optimizer.lr};
      result.log.push_back(row);
      if (on_step) on_step(row);
    }
    if (eval_set && eval_set->size() > 0) {
      const double l = eval_loss(arch, cfg, trainer.params, *eval_set);
      if (!std::isfinite(l)) throw NumericsError("non-finite eval loss after epoch " + std::to_string(epoch + 1));
      if (!have_best || l < result.best_eval_loss) {
        have_best = true;
        result.best_eval_loss = l;
        result.best_epoch = epoch + 1;
        result.best_params = trainer.params;
      }
    }
  }
  result.final_params = trainer.params;
  if (!have_best) {
    result.best_params = trainer.params;
    result.best_epoch = cfg.epochs;
  }
  if (eval_set && eval_set->size() > 0) {
    result.final_metrics = evaluate(arch, effective_pooling(cfg), result.final_params, *eval_set, cfg.threshold,
                                    cfg.batch_size);
  }
  return result;
}

}  // namespace mtlsed::train
