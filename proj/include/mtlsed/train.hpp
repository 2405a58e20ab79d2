#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtlsed/data.hpp"
#include "mtlsed/loss.hpp"
#include "mtlsed/metrics.hpp"
#include "mtlsed/model.hpp"

namespace mtlsed::train {

using model::ArchConfig;
using model::ModelParams;
using model::PoolingKind;

enum class TrainMode { mtl_weak, mtl_strong, asc_only, sed_only };

std::string_view to_string(TrainMode mode);
TrainMode parse_mode(std::string_view text);

/// Targets a mode is allowed to read.
data::TargetSelection targets_for(TrainMode mode);

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool rectified = true;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

template <typename Real>
struct OptimizerState {
  ModelParams<Real> m, v;
  std::uint64_t step = 0;
};

/// Rectified Adam: while the variance-rectification term is undefined
/// (rho_t <= 4) the step is lr * bias-corrected momentum; afterwards the
/// adaptive step is scaled by r_t. Plain Adam when `rectified` is false.
/// Non-trainable entries are left alone. A non-finite gradient aborts before
/// anything is modified.
template <typename Real>
void optimizer_step(ModelParams<Real>& params, const ModelParams<Real>& grads, OptimizerState<Real>& state,
                    const OptimizerConfig& cfg);

/// rho_t of the rectification schedule.
double radam_rho(double beta2, std::uint64_t step);

/// Scales `grads` in place so that their global L2 norm is at most
/// `max_norm`; returns the norm before scaling.
template <typename Real>
double clip_grad_norm(ModelParams<Real>& grads, double max_norm);

struct TrainConfig {
  TrainMode mode = TrainMode::mtl_weak;
  /// Empty disables the bag head (frame term only).
  std::optional<PoolingKind> pooling = PoolingKind::attention;
  loss::LossWeights weights;
  OptimizerConfig optimizer;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;  // 0 disables clipping
  double eval_fraction = data::kDefaultEvalFraction;
  double threshold = 0.5;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// The bag head only exists for mtl-weak and sed-only.
std::optional<PoolingKind> effective_pooling(const TrainConfig& cfg);

struct LossParts {
  double scene = 0;
  double event = 0;
  double total = 0;
};

/// Batch-averaged loss of `mode` and, when `grads` is non-null, the matching
/// gradients with respect to the model outputs.
LossParts mode_loss(TrainMode mode, const loss::LossWeights& w, bool use_bag, const model::ModelOutput<float>& out,
                    const data::Batch& batch, model::OutputGrads<float>* grads);

struct LogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss_total = 0;
  double loss_scene = 0;
  double loss_event = 0;
  double lr = 0;
};

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& rows);

struct TrainResult {
  ModelParams<float> final_params;
  ModelParams<float> best_params;
  double best_eval_loss = 0;
  std::size_t best_epoch = 0;
  std::vector<LogRow> log;
  std::optional<metrics::MetricsReport> final_metrics;  // final params on the eval set
};

using StepCallback = std::function<void(const LogRow&)>;

/// Trains from weights initialized with `cfg.seed`. With an eval set the best
/// parameters are chosen by eval loss after every epoch; otherwise best equals
/// final.
TrainResult train_loop(const data::Dataset& train_set, const data::Dataset* eval_set, const ArchConfig& arch,
                       const TrainConfig& cfg, const StepCallback& on_step = {});

/// One forward/backward/update on a fixed batch; the building block of
/// train_loop, exposed for overfit checks.
struct Trainer {
  Trainer(const ArchConfig& arch, const TrainConfig& cfg);

  LossParts step(const data::Batch& batch);

  ArchConfig arch;
  TrainConfig cfg;
  ModelParams<float> params;
  OptimizerState<float> state;
};

double eval_loss(const ArchConfig& arch, const TrainConfig& cfg, const ModelParams<float>& params,
                 const data::Dataset& ds);

/// Eval-mode forward of every clip; scene argmax and thresholded frame
/// probabilities against the rasterized strong rolls.
metrics::MetricsReport evaluate(const ArchConfig& arch, std::optional<PoolingKind> pooling,
                                const ModelParams<float>& params, const data::Dataset& ds, double threshold = 0.5,
                                std::size_t batch_size = 8);

}  // namespace mtlsed::train
