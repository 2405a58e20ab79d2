#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtlsed/dsp.hpp"
#include "mtlsed/metrics.hpp"
#include "mtlsed/tensor.hpp"

namespace mtlsed::data {

using metrics::StrongEvent;

struct Vocabulary {
  std::vector<std::string> scenes;
  std::vector<std::string> events;

  /// 4 scenes and 25 event classes.
  static Vocabulary default_vocabulary();

  std::size_t scene_index(const std::string& name) const;
  std::size_t event_index(const std::string& name) const;
  void validate() const;

  bool operator==(const Vocabulary&) const = default;
};

Vocabulary load_vocabulary(const std::filesystem::path& path);
void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);

struct ClipAnnotation {
  std::string clip_id;
  std::string source;
  std::string scene;
  std::vector<std::string> events_weak;  // sorted, unique
  std::optional<std::vector<StrongEvent>> events_strong;

  bool operator==(const ClipAnnotation&) const = default;
};

void validate_annotation(const ClipAnnotation& ann, const Vocabulary& vocab);

std::vector<ClipAnnotation> parse_annotations(std::istream& is, const Vocabulary& vocab);
std::vector<ClipAnnotation> load_annotations(const std::filesystem::path& path, const Vocabulary& vocab);
std::string annotation_to_json(const ClipAnnotation& ann);
void write_annotations(const std::filesystem::path& path, const std::vector<ClipAnnotation>& anns);

/// Layout of a data directory: annotations.jsonl plus an optional
/// vocabulary.json; relative sources resolve against the directory.
inline constexpr const char* kAnnotationsFile = "annotations.jsonl";
inline constexpr const char* kVocabularyFile = "vocabulary.json";

Vocabulary load_directory_vocabulary(const std::filesystem::path& dir);

struct Clip {
  ClipAnnotation annotation;
  dsp::FeatureMap features;
  std::size_t scene = 0;
  Tensor<float> weak;                   // (M)
  std::optional<Tensor<float>> strong;  // (T, M)
};

struct Dataset {
  Vocabulary vocab;
  std::vector<Clip> clips;

  std::size_t size() const { return clips.size(); }
};

/// Loads every feature source up front. Missing sources raise IoError.
Dataset load_dataset(const std::vector<ClipAnnotation>& anns, const Vocabulary& vocab,
                     const std::filesystem::path& base_dir, const dsp::DspConfig& cfg);
Dataset load_dataset(const std::filesystem::path& dir, const dsp::DspConfig& cfg);

/// Which targets a batch carries; a mode that does not need a label never sees it.
struct TargetSelection {
  bool scene = true;
  bool weak = true;
  bool strong = false;

  bool operator==(const TargetSelection&) const = default;
};

struct Batch {
  std::vector<std::size_t> indices;
  Tensor<float> features;              // (N, T, D)
  std::optional<std::vector<std::size_t>> scenes;
  std::optional<Tensor<float>> weak;   // (N, M)
  std::optional<Tensor<float>> strong; // (N, T, M)

  std::size_t size() const { return indices.size(); }
};

/// Clip order for one epoch, split into batches; the last partial batch is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_clips, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch, bool shuffle);

Batch assemble_batch(const Dataset& ds, std::span<const std::size_t> indices, TargetSelection targets);

std::vector<Batch> make_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::size_t epoch,
                                bool shuffle, TargetSelection targets);

/// Stratified by scene. Every scene needs at least two clips.
std::pair<std::vector<ClipAnnotation>, std::vector<ClipAnnotation>> train_eval_split(
    const std::vector<ClipAnnotation>& anns, double eval_fraction, std::uint64_t seed);

inline constexpr double kDefaultEvalFraction = 74.0 / 266.0;

// Synthetic corpus.

struct DurationRange {
  double min_s = 0.1;
  double max_s = 0.5;

  bool operator==(const DurationRange&) const = default;
};

struct SceneEventPrior {
  std::vector<std::vector<double>> occurrence;  // [scene][event]
  std::vector<DurationRange> durations;         // [event]

  static SceneEventPrior default_prior();
  void validate(const Vocabulary& vocab) const;

  bool operator==(const SceneEventPrior&) const = default;
};

struct SynthConfig {
  std::size_t n_clips = 100;
  std::uint64_t seed = 0;
  double clip_seconds = 10.0;
  std::uint32_t sample_rate = 16000;
  Vocabulary vocab = Vocabulary::default_vocabulary();
  SceneEventPrior prior = SceneEventPrior::default_prior();

  void validate() const;
};

struct SynthClip {
  ClipAnnotation annotation;
  dsp::Waveform wave;
};

/// Clip i gets scene i mod n_scenes; everything else is drawn from a
/// generator seeded by (seed, i).
SynthClip synth_clip(const SynthConfig& cfg, std::size_t index);
std::vector<SynthClip> synth_corpus(const SynthConfig& cfg);

/// Writes clip wavs under DIR/audio, annotations.jsonl and vocabulary.json.
std::vector<ClipAnnotation> write_corpus(const std::filesystem::path& dir, const SynthConfig& cfg);

/// Builds a dataset straight from synthesized audio without touching disk.
Dataset synth_dataset(const SynthConfig& cfg, const dsp::DspConfig& dsp_cfg);

}  // namespace mtlsed::data
