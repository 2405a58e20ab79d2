#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mtlsed/tensor.hpp"

/// Clip-level scene F-scores and frame-based event F-scores.
namespace mtlsed::metrics {

/// Frames x classes activity matrix with 0/1 entries.
using BinaryRoll = Tensor<std::uint8_t>;

struct ClassCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  bool operator==(const ClassCounts&) const = default;
};

struct ConfusionCounts {
  std::vector<ClassCounts> per_class;

  ClassCounts pooled() const;
};

/// 2TP / (2TP + FP + FN); 0 when a class has no TP, FP or FN at all.
double f1(const ClassCounts& c);

struct Scores {
  double micro_f = 0;
  double macro_f = 0;
  std::vector<double> per_class_f;
};

struct MetricsReport {
  double scene_micro_f = 0;
  double scene_macro_f = 0;
  double event_micro_f = 0;
  double event_macro_f = 0;
  std::map<std::string, double> per_event_f;

  bool operator==(const MetricsReport&) const = default;
};

/// Counts from single-label predictions over `n_classes` classes.
ConfusionCounts scene_counts(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                             std::size_t n_classes);

/// Micro-F over pooled counts (equal to accuracy for single-label data) and the
/// unweighted mean of per-class F1.
Scores scene_scores(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                    std::size_t n_classes);

/// p >= threshold -> 1.
template <typename Real>
BinaryRoll binarize_frames(const Tensor<Real>& probs, double threshold = 0.5) {
  BinaryRoll out(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = static_cast<double>(probs[i]) >= threshold ? 1 : 0;
  return out;
}

/// Per-class counts over (T, M) rolls; several clips may be stacked along T.
ConfusionCounts event_counts(const BinaryRoll& predicted, const BinaryRoll& truth);

Scores event_frame_scores(const BinaryRoll& predicted, const BinaryRoll& truth);

struct StrongEvent {
  std::string event;
  double onset = 0;
  double offset = 0;

  bool operator==(const StrongEvent&) const = default;
};

/// Frame t is active iff [t*hop, t*hop + hop) overlaps [onset, offset).
BinaryRoll rasterize_roll(std::span<const StrongEvent> events, std::size_t n_frames, double hop_s,
                          std::span<const std::string> vocabulary);

/// JSON object with keys scene_micro_f, scene_macro_f, event_micro_f,
/// event_macro_f and per_event_f.
std::string to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);

}  // namespace mtlsed::metrics
