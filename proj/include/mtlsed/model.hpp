#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtlsed/milpool.hpp"
#include "mtlsed/nn/batch_norm.hpp"
#include "mtlsed/nn/gru.hpp"
#include "mtlsed/tensor.hpp"

/// Shared CNN trunk with a CNN scene branch and a BiGRU event branch. The
/// event branch yields frame logits that feed both a frame-level sigmoid head
/// and a MIL pooling head (pooled logits, then sigmoid).
namespace mtlsed::model {

using milpool::PoolingKind;
using nn::Mode;

struct ArchConfig {
  std::size_t n_mels = 64;
  std::size_t n_frames = 500;
  std::size_t shared_channels = 128;
  std::size_t scene_channels = 256;
  std::size_t gru_hidden = 32;  // per direction
  std::size_t fc_hidden = 32;
  std::size_t n_scenes = 4;
  std::size_t n_events = 25;
  /// Multiplies every channel/hidden width; scaled widths never drop below 4.
  double scale_factor = 1.0;
  /// Frequency pooling of the three shared blocks (1 x p each).
  std::array<std::size_t, 3> shared_freq_pools{8, 2, 2};
  /// Time pooling after the first scene conv (p x 1).
  std::size_t scene_time_pool = 25;

  std::size_t shared_width() const { return scaled(shared_channels); }
  std::size_t scene_width() const { return scaled(scene_channels); }
  std::size_t gru_width() const { return scaled(gru_hidden); }
  std::size_t fc_width() const { return scaled(fc_hidden); }
  std::size_t pooled_freq() const;
  std::size_t event_input_dim() const { return shared_width() * pooled_freq(); }

  /// Throws InvalidConfig on non-positive sizes or pooling that does not tile.
  void validate() const;

  /// The full-size network.
  static ArchConfig full_size() { return {}; }
  /// 8 frames x 8 mels, widths 4: small enough for finite-difference checks.
  static ArchConfig tiny();

  bool operator==(const ArchConfig&) const = default;

 private:
  std::size_t scaled(std::size_t width) const;
};

/// Dimensions every stage must produce for a config.
struct ShapeTrace {
  Shape input;               // (T, D)
  Shape shared_output;       // (C, T, D / prod(freq pools))
  std::size_t scene_pooled_time = 0;
  Shape scene_output;        // (N_scenes)
  Shape event_features;      // (T, 2H)
  Shape frame_logits;        // (T, M)
  Shape bag_logits;          // (M)
};

ShapeTrace shape_trace(const ArchConfig& cfg);

template <typename Real>
struct ParamEntry {
  std::string name;
  Tensor<Real> value;
  bool trainable = true;
};

/// Ordered named parameter arrays. Order is fixed by construction and is the
/// order used in checkpoints.
template <typename Real>
class ParamSet {
 public:
  void add(std::string name, Tensor<Real> value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<Real>& operator[](const std::string& name);
  const Tensor<Real>& operator[](const std::string& name) const;

  std::vector<ParamEntry<Real>>& entries() { return entries_; }
  const std::vector<ParamEntry<Real>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;

  /// Same names, shapes and flags, all values zero.
  ParamSet zeros_like() const;

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<Other>(), e.trainable);
    return out;
  }

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<ParamEntry<Real>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename Real>
using ModelParams = ParamSet<Real>;

/// Glorot-uniform weights, zero biases, unit batch-norm scale. The attention
/// head exists only for attention pooling. Values are drawn in double and
/// cast, so float and double parameter sets from one seed agree.
template <typename Real>
ModelParams<Real> init_params(const ArchConfig& cfg, std::optional<PoolingKind> pooling, std::uint64_t seed);

/// Checks that `params` carries every array `cfg` requires with matching shape.
template <typename Real>
void check_params(const ArchConfig& cfg, std::optional<PoolingKind> pooling, const ModelParams<Real>& params);

struct Branches {
  bool scene = true;
  bool event = true;
};

enum class Task { asc, sed };

template <typename Real>
struct ModelOutput {
  Tensor<Real> scene_probs;   // (N, S)
  Tensor<Real> frame_logits;  // (N, T, M)
  Tensor<Real> frame_probs;   // (N, T, M)
  Tensor<Real> bag_logits;    // (N, M), empty without pooling
  Tensor<Real> bag_probs;     // (N, M)
};

template <typename Real>
struct ConvBlockCache {
  Tensor<Real> input;
  nn::BatchNormCache<Real> bn;
  Tensor<Real> pre_activation;
  Shape pool_input_shape;
  std::size_t pool_t = 0, pool_f = 0;  // window; 0 x 0 means global
  std::vector<std::size_t> argmax;
};

template <typename Real>
struct ForwardCache {
  Branches branches;
  std::optional<PoolingKind> pooling;
  std::size_t batch = 0;
  std::array<ConvBlockCache<Real>, 3> shared;
  Tensor<Real> shared_output;
  // scene branch
  std::array<ConvBlockCache<Real>, 2> scene;
  Tensor<Real> scene_embedding, scene_fc0_pre, scene_fc0_out;
  // event branch
  std::vector<nn::BiGruCache<Real>> gru;
  Tensor<Real> gru_output;  // (N*T, 2H)
  Tensor<Real> event_fc0_pre, event_fc0_out;
  Tensor<Real> attention_logits;  // (N*T, M)
};

template <typename Real>
struct ForwardResult {
  ModelOutput<Real> output;
  ForwardCache<Real> cache;
  /// New running statistics (train mode), keyed by parameter name.
  std::map<std::string, Tensor<Real>> running_updates;
};

/// Upstream gradients w.r.t. the probability outputs; empty tensors contribute
/// nothing.
template <typename Real>
struct OutputGrads {
  Tensor<Real> scene_probs;
  Tensor<Real> frame_probs;
  Tensor<Real> bag_probs;
};

/// features: (N, T, D). `pooling` empty disables the bag head.
template <typename Real>
ForwardResult<Real> forward(const ArchConfig& cfg, const ModelParams<Real>& params, const Tensor<Real>& features,
                            std::optional<PoolingKind> pooling, Mode mode, Branches branches = {});

/// Shared layers plus one branch only.
template <typename Real>
ForwardResult<Real> forward_single_task(const ArchConfig& cfg, const ModelParams<Real>& params,
                                        const Tensor<Real>& features, Task task,
                                        std::optional<PoolingKind> pooling, Mode mode);

/// Gradients for every parameter reachable from the non-empty output grads;
/// running statistics and unreachable arrays get zeros.
template <typename Real>
ModelParams<Real> backward(const ArchConfig& cfg, const ModelParams<Real>& params, const ForwardCache<Real>& cache,
                           const OutputGrads<Real>& grads);

template <typename Real>
void apply_running_updates(ModelParams<Real>& params, const ForwardResult<Real>& result);

/// Smallest distance of any leaky-ReLU input to 0 or of any max-pool winner
/// to its runner-up in a forward pass; finite-difference checks resample when
/// this is tiny.
template <typename Real>
double kink_margin(const ForwardResult<Real>& result);

inline bool is_event_param(const std::string& name) { return name.rfind("event.", 0) == 0; }
inline bool is_scene_param(const std::string& name) { return name.rfind("scene.", 0) == 0; }
inline bool is_shared_param(const std::string& name) { return name.rfind("shared.", 0) == 0; }

}  // namespace mtlsed::model
