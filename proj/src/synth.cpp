#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "mtlsed/data.hpp"

namespace mtlsed::data {

namespace {

enum class Signature { tone, chirp, noise_burst };

struct EventSpec {
  const char* name;
  std::vector<std::size_t> home_scenes;
  bool sustained;
};

// Scene order: city center, home, office, residential area.
const std::vector<EventSpec>& event_table() {
  static const std::vector<EventSpec> table = {
      {"bird singing", {3, 0}, true},     {"brakes squeaking", {0}, false}, {"car", {0, 3}, true},
      {"children", {3, 1}, true},         {"cutlery", {1}, false},          {"dishes", {1}, false},
      {"door", {1, 2}, false},            {"drawer", {1, 2}, false},        {"glass jingling", {1}, false},
      {"keyboard typing", {2}, true},     {"large vehicle", {0, 3}, true},  {"object banging", {3, 1}, false},
      {"object impact", {1, 2}, false},   {"object rustling", {1, 2}, true}, {"object snapping", {1}, false},
      {"people speaking", {0, 2, 3}, true}, {"people walking", {0, 3}, true}, {"washing dishes", {1}, true},
      {"water tap running", {1}, true},   {"wind blowing", {3, 0}, true},   {"mouse clicking", {2}, false},
      {"footsteps", {2, 0}, false},       {"chair moving", {2}, false},     {"phone ringing", {2}, true},
      {"cupboard", {1}, false},
  };
  return table;
}

constexpr double kHomeProbability = 0.5;
constexpr double kStrayProbability = 0.05;
constexpr std::size_t kBands = 13;

// One-pole low-pass coefficient of each scene's noise bed.
constexpr double kBedColor[] = {0.55, 0.7, 0.8, 0.62};

Signature signature_of(std::size_t m) { return static_cast<Signature>(m % 3); }

double band_centre(std::size_t m) { return 200.0 * std::exp2(0.35 * static_cast<double>(m % kBands)); }

std::mt19937_64 clip_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
  return std::mt19937_64(seq);
}

void add_bed(std::vector<double>& x, std::size_t scene, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-0.08, 0.08), gain(0.7, 1.3);
  const double a = kBedColor[scene % std::size(kBedColor)] + jitter(rng);
  const double target_rms = 0.03 * gain(rng);
  std::vector<double> bed(x.size());
  double y = 0, energy = 0;
  for (double& b : bed) {
    y = a * y + (1 - a) * noise(rng);
    b = y;
    energy += y * y;
  }
  const double scale = energy > 0 ? target_rms / std::sqrt(energy / static_cast<double>(bed.size())) : 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += scale * bed[i];
}

void add_event(std::vector<double>& x, std::size_t m, std::size_t start, std::size_t stop, double sr,
               std::mt19937_64& rng) {
  std::uniform_real_distribution<double> amp_dist(0.05, 0.15), unit(0.0, 1.0);
  const double amp = amp_dist(rng);
  const double f = band_centre(m);
  const std::size_t len = stop - start;
  const auto ramp = std::max<std::size_t>(1, std::min(len / 2, static_cast<std::size_t>(0.01 * sr)));
  constexpr double two_pi = 2 * std::numbers::pi;

  std::vector<double> partial_freq, partial_phase;
  if (signature_of(m) == Signature::noise_burst) {
    for (int k = 0; k < 8; ++k) {
      partial_freq.push_back(f * (0.85 + 0.3 * unit(rng)));
      partial_phase.push_back(two_pi * unit(rng));
    }
  }
  const double phase0 = two_pi * unit(rng);
  double phase = phase0;
  for (std::size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double env = std::min({1.0, static_cast<double>(i + 1) / static_cast<double>(ramp),
                                 static_cast<double>(len - i) / static_cast<double>(ramp)});
    double v = 0;
    switch (signature_of(m)) {
      case Signature::tone:
        v = std::sin(two_pi * f * t + phase0) + 0.4 * std::sin(2 * (two_pi * f * t + phase0));
        break;
      case Signature::chirp: {
        const double inst = f * (0.8 + 0.45 * static_cast<double>(i) / static_cast<double>(len));
        phase += two_pi * inst / sr;
        v = std::sin(phase);
        break;
      }
      case Signature::noise_burst:
        for (std::size_t k = 0; k < partial_freq.size(); ++k) v += std::sin(two_pi * partial_freq[k] * t + partial_phase[k]);
        v *= 0.35 * (0.6 + 0.4 * std::sin(two_pi * 8.0 * t));
        break;
    }
    x[start + i] += amp * env * v;
  }
}

}  // namespace

Vocabulary Vocabulary::default_vocabulary() {
  Vocabulary v;
  v.scenes = {"city center", "home", "office", "residential area"};
  for (const EventSpec& e : event_table()) v.events.emplace_back(e.name);
  return v;
}

SceneEventPrior SceneEventPrior::default_prior() {
  const auto& table = event_table();
  SceneEventPrior p;
  p.occurrence.assign(4, std::vector<double>(table.size(), kStrayProbability));
  for (std::size_t m = 0; m < table.size(); ++m) {
    for (std::size_t s : table[m].home_scenes) p.occurrence[s][m] = kHomeProbability;
    p.durations.push_back(table[m].sustained ? DurationRange{1.5, 5.0} : DurationRange{0.2, 0.8});
  }
  return p;
}

void SceneEventPrior::validate(const Vocabulary& vocab) const {
  if (occurrence.size() != vocab.scenes.size()) throw InvalidConfig("prior needs one row per scene");
  for (const auto& row : occurrence) {
    if (row.size() != vocab.events.size()) throw InvalidConfig("prior needs one probability per event");
    for (double p : row) {
      if (!(p >= 0 && p <= 1)) throw InvalidConfig("prior probabilities must lie in [0, 1]");
    }
  }
  if (durations.size() != vocab.events.size()) throw InvalidConfig("prior needs one duration range per event");
  for (const DurationRange& d : durations) {
    if (!(d.min_s > 0 && d.min_s <= d.max_s)) throw InvalidConfig("duration range needs 0 < min <= max");
  }
}

void SynthConfig::validate() const {
  vocab.validate();
  prior.validate(vocab);
  if (n_clips == 0) throw InvalidConfig("n_clips must be positive");
  if (!(clip_seconds > 0) || sample_rate == 0) throw InvalidConfig("clip length and sample rate must be positive");
}

SynthClip synth_clip(const SynthConfig& cfg, std::size_t index) {
  auto rng = clip_rng(cfg.seed, index);
  const std::size_t scene = index % cfg.vocab.scenes.size();
  const double sr = cfg.sample_rate;
  const auto n_samples = static_cast<std::size_t>(std::llround(cfg.clip_seconds * sr));

  std::vector<double> x(n_samples, 0.0);
  add_bed(x, scene, rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<StrongEvent> strong;
  for (std::size_t m = 0; m < cfg.vocab.events.size(); ++m) {
    if (unit(rng) >= cfg.prior.occurrence[scene][m]) continue;
    const DurationRange& d = cfg.prior.durations[m];
    const double duration = std::min(d.min_s + (d.max_s - d.min_s) * unit(rng), 0.9 * cfg.clip_seconds);
    const auto len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(duration * sr)));
    const auto start = static_cast<std::size_t>(unit(rng) * static_cast<double>(n_samples - len));
    add_event(x, m, start, start + len, sr, rng);
    strong.push_back({cfg.vocab.events[m], static_cast<double>(start) / sr, static_cast<double>(start + len) / sr});
  }

  double peak = 0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  const double norm = peak > 0.99 ? 0.99 / peak : 1.0;

  SynthClip clip;
  clip.wave.sample_rate = cfg.sample_rate;
  clip.wave.samples.resize(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) clip.wave.samples[i] = static_cast<float>(x[i] * norm);

  char id[32];
  std::snprintf(id, sizeof id, "clip_%05zu", index);
  clip.annotation.clip_id = id;
  clip.annotation.source = std::string("audio/") + id + ".wav";
  clip.annotation.scene = cfg.vocab.scenes[scene];
  for (const StrongEvent& e : strong) clip.annotation.events_weak.push_back(e.event);
  std::sort(clip.annotation.events_weak.begin(), clip.annotation.events_weak.end());
  clip.annotation.events_strong = std::move(strong);
  return clip;
}

std::vector<SynthClip> synth_corpus(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SynthClip> out;
  out.reserve(cfg.n_clips);
  for (std::size_t i = 0; i < cfg.n_clips; ++i) out.push_back(synth_clip(cfg, i));
  return out;
}

std::vector<ClipAnnotation> write_corpus(const std::filesystem::path& dir, const SynthConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(dir / "audio");
  std::vector<ClipAnnotation> anns;
  for (std::size_t i = 0; i < cfg.n_clips; ++i) {
    SynthClip clip = synth_clip(cfg, i);
    dsp::write_wav(dir / clip.annotation.source, clip.wave);
    anns.push_back(std::move(clip.annotation));
  }
  write_annotations(dir / kAnnotationsFile, anns);
  save_vocabulary(dir / kVocabularyFile, cfg.vocab);
  return anns;
}

Dataset synth_dataset(const SynthConfig& cfg, const dsp::DspConfig& dsp_cfg) {
  cfg.validate();
  Dataset ds{cfg.vocab, {}};
  const double hop_s = dsp_cfg.hop_ms / 1000.0;
  for (std::size_t i = 0; i < cfg.n_clips; ++i) {
    SynthClip sc = synth_clip(cfg, i);
    Clip clip;
    clip.features = dsp::log_mel_energy(sc.wave, dsp_cfg);
    clip.scene = cfg.vocab.scene_index(sc.annotation.scene);
    clip.weak = Tensor<float>({cfg.vocab.events.size()});
    for (const std::string& e : sc.annotation.events_weak) clip.weak[cfg.vocab.event_index(e)] = 1.0f;
    const auto roll =
        metrics::rasterize_roll(*sc.annotation.events_strong, clip.features.n_frames(), hop_s, cfg.vocab.events);
    Tensor<float> strong(roll.shape());
    for (std::size_t k = 0; k < roll.size(); ++k) strong[k] = roll[k];
    clip.strong = std::move(strong);
    clip.annotation = std::move(sc.annotation);
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

}  // namespace mtlsed::data
