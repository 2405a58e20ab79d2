#include "mtlsed/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mtlsed::data {

namespace {

using nlohmann::json;

std::size_t index_of(const std::vector<std::string>& names, const std::string& name, const char* what) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw VocabularyError(std::string("unknown ") + what + " '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

void require_unique(const std::vector<std::string>& names, const char* what) {
  if (names.empty()) throw VocabularyError(std::string("empty ") + what + " vocabulary");
  std::set<std::string> seen;
  for (const std::string& n : names) {
    if (!seen.insert(n).second) throw VocabularyError(std::string("duplicate ") + what + " '" + n + "'");
  }
}

}  // namespace

std::size_t Vocabulary::scene_index(const std::string& name) const { return index_of(scenes, name, "scene"); }

std::size_t Vocabulary::event_index(const std::string& name) const { return index_of(events, name, "event"); }

void Vocabulary::validate() const {
  require_unique(scenes, "scene");
  require_unique(events, "event");
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open vocabulary " + path.string());
  Vocabulary v;
  try {
    const json j = json::parse(is);
    v.scenes = j.at("scenes").get<std::vector<std::string>>();
    v.events = j.at("events").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  v.validate();
  return v;
}

void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << json{{"scenes", vocab.scenes}, {"events", vocab.events}}.dump(2) << '\n';
}

Vocabulary load_directory_vocabulary(const std::filesystem::path& dir) {
  const auto path = dir / kVocabularyFile;
  return std::filesystem::exists(path) ? load_vocabulary(path) : Vocabulary::default_vocabulary();
}

void validate_annotation(const ClipAnnotation& ann, const Vocabulary& vocab) {
  if (ann.clip_id.empty()) throw InvalidInput("annotation without clip_id");
  vocab.scene_index(ann.scene);
  for (const std::string& e : ann.events_weak) vocab.event_index(e);
  if (!std::is_sorted(ann.events_weak.begin(), ann.events_weak.end()) ||
      std::adjacent_find(ann.events_weak.begin(), ann.events_weak.end()) != ann.events_weak.end()) {
    throw InvalidInput("clip " + ann.clip_id + ": events_weak must be sorted and unique");
  }
  if (!ann.events_strong) return;
  std::set<std::string> strong_tags;
  for (const StrongEvent& e : *ann.events_strong) {
    vocab.event_index(e.event);
    if (!(e.onset >= 0) || !(e.onset < e.offset)) {
      throw InvalidInput("clip " + ann.clip_id + ": event '" + e.event + "' needs 0 <= onset < offset");
    }
    strong_tags.insert(e.event);
  }
  if (!std::equal(strong_tags.begin(), strong_tags.end(), ann.events_weak.begin(), ann.events_weak.end())) {
    throw VocabularyError("clip " + ann.clip_id + ": strong event set differs from events_weak");
  }
}

std::vector<ClipAnnotation> parse_annotations(std::istream& is, const Vocabulary& vocab) {
  std::vector<ClipAnnotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ClipAnnotation ann;
    try {
      const json j = json::parse(line);
      ann.clip_id = j.at("clip_id").get<std::string>();
      ann.source = j.at("source").get<std::string>();
      ann.scene = j.at("scene").get<std::string>();
      const auto weak = j.at("events_weak").get<std::set<std::string>>();
      ann.events_weak.assign(weak.begin(), weak.end());
      if (j.contains("events_strong") && !j.at("events_strong").is_null()) {
        std::vector<StrongEvent> strong;
        for (const json& e : j.at("events_strong")) {
          strong.push_back({e.at("event").get<std::string>(), e.at("onset").get<double>(),
                            e.at("offset").get<double>()});
        }
        ann.events_strong = std::move(strong);
      }
    } catch (const json::exception& e) {
      throw ParseError("annotation line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    validate_annotation(ann, vocab);
    out.push_back(std::move(ann));
  }
  return out;
}

std::vector<ClipAnnotation> load_annotations(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open annotations " + path.string());
  return parse_annotations(is, vocab);
}

std::string annotation_to_json(const ClipAnnotation& ann) {
  nlohmann::ordered_json j;
  j["clip_id"] = ann.clip_id;
  j["source"] = ann.source;
  j["scene"] = ann.scene;
  j["events_weak"] = ann.events_weak;
  if (ann.events_strong) {
    j["events_strong"] = nlohmann::ordered_json::array();
    for (const StrongEvent& e : *ann.events_strong) {
      j["events_strong"].push_back({{"event", e.event}, {"onset", e.onset}, {"offset", e.offset}});
    }
  } else {
    j["events_strong"] = nullptr;
  }
  return j.dump();
}

void write_annotations(const std::filesystem::path& path, const std::vector<ClipAnnotation>& anns) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const ClipAnnotation& a : anns) os << annotation_to_json(a) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

Dataset load_dataset(const std::vector<ClipAnnotation>& anns, const Vocabulary& vocab,
                     const std::filesystem::path& base_dir, const dsp::DspConfig& cfg) {
  vocab.validate();
  Dataset ds{vocab, {}};
  ds.clips.reserve(anns.size());
  const double hop_s = cfg.hop_ms / 1000.0;
  for (const ClipAnnotation& ann : anns) {
    validate_annotation(ann, vocab);
    std::filesystem::path src(ann.source);
    if (src.is_relative()) src = base_dir / src;
    if (!std::filesystem::exists(src)) throw IoError("clip " + ann.clip_id + ": missing source " + src.string());
    Clip clip;
    clip.annotation = ann;
    clip.features = dsp::load_feature_source(src, cfg);
    if (clip.features.n_bins() != cfg.n_mels) {
      throw ShapeError("clip " + ann.clip_id + ": feature dimension " + std::to_string(clip.features.n_bins()) +
                       " does not match n_mels " + std::to_string(cfg.n_mels));
    }
    clip.scene = vocab.scene_index(ann.scene);
    clip.weak = Tensor<float>({vocab.events.size()});
    for (const std::string& e : ann.events_weak) clip.weak[vocab.event_index(e)] = 1.0f;
    if (ann.events_strong) {
      const auto roll = metrics::rasterize_roll(*ann.events_strong, clip.features.n_frames(), hop_s, vocab.events);
      Tensor<float> strong(roll.shape());
      for (std::size_t i = 0; i < roll.size(); ++i) strong[i] = roll[i];
      clip.strong = std::move(strong);
    }
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& dir, const dsp::DspConfig& cfg) {
  const Vocabulary vocab = load_directory_vocabulary(dir);
  return load_dataset(load_annotations(dir / kAnnotationsFile, vocab), vocab, dir, cfg);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_clips, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch, bool shuffle) {
  if (batch_size == 0) throw InvalidConfig("batch_size must be positive");
  std::vector<std::size_t> order(n_clips);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n_clips; start += batch_size) {
    const std::size_t stop = std::min(n_clips, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

Batch assemble_batch(const Dataset& ds, std::span<const std::size_t> indices, TargetSelection targets) {
  if (indices.empty()) throw InvalidInput("empty batch");
  const Clip& first = ds.clips.at(indices[0]);
  const std::size_t n = indices.size(), steps = first.features.n_frames(), dim = first.features.n_bins();
  const std::size_t events = ds.vocab.events.size();
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  b.features = Tensor<float>({n, steps, dim});
  if (targets.scene) b.scenes.emplace();
  if (targets.weak) b.weak = Tensor<float>({n, events});
  if (targets.strong) b.strong = Tensor<float>({n, steps, events});
  for (std::size_t i = 0; i < n; ++i) {
    const Clip& c = ds.clips.at(indices[i]);
    if (c.features.n_frames() != steps || c.features.n_bins() != dim) {
      throw ShapeError("clip " + c.annotation.clip_id + " has features " + shape_string(c.features.data.shape()) +
                       ", batch expects " + shape_string({steps, dim}));
    }
    std::copy(c.features.data.values().begin(), c.features.data.values().end(),
              b.features.data() + i * steps * dim);
    if (targets.scene) b.scenes->push_back(c.scene);
    if (targets.weak) std::copy(c.weak.values().begin(), c.weak.values().end(), b.weak->data() + i * events);
    if (targets.strong) {
      if (!c.strong) throw InvalidInput("clip " + c.annotation.clip_id + " has no strong annotation");
      std::copy(c.strong->values().begin(), c.strong->values().end(), b.strong->data() + i * steps * events);
    }
  }
  return b;
}

std::vector<Batch> make_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::size_t epoch,
                                bool shuffle, TargetSelection targets) {
  std::vector<Batch> out;
  for (const auto& idx : epoch_batches(ds.size(), batch_size, seed, epoch, shuffle)) {
    out.push_back(assemble_batch(ds, idx, targets));
  }
  return out;
}

std::pair<std::vector<ClipAnnotation>, std::vector<ClipAnnotation>> train_eval_split(
    const std::vector<ClipAnnotation>& anns, double eval_fraction, std::uint64_t seed) {
  if (!(eval_fraction > 0 && eval_fraction < 1)) throw InvalidConfig("eval_fraction must lie in (0, 1)");
  std::map<std::string, std::vector<std::size_t>> by_scene;
  for (std::size_t i = 0; i < anns.size(); ++i) by_scene[anns[i].scene].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<bool> is_eval(anns.size(), false);
  for (auto& [scene, members] : by_scene) {
    if (members.size() < 2) {
      throw SplitError("scene '" + scene + "' has " + std::to_string(members.size()) + " clip(s); need at least 2");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto wanted = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(members.size())));
    const std::size_t n_eval = std::clamp<std::size_t>(wanted, 1, members.size() - 1);
    for (std::size_t k = 0; k < n_eval; ++k) is_eval[members[k]] = true;
  }
  std::pair<std::vector<ClipAnnotation>, std::vector<ClipAnnotation>> out;
  for (std::size_t i = 0; i < anns.size(); ++i) (is_eval[i] ? out.second : out.first).push_back(anns[i]);
  return out;
}

}  // namespace mtlsed::data
