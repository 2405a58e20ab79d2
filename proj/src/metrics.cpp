#include "mtlsed/metrics.hpp"

#include <algorithm>

#include <json.hpp>

namespace mtlsed::metrics {

ClassCounts ConfusionCounts::pooled() const {
  ClassCounts total;
  for (const ClassCounts& c : per_class) {
    total.tp += c.tp;
    total.fp += c.fp;
    total.fn += c.fn;
    total.tn += c.tn;
  }
  return total;
}

double f1(const ClassCounts& c) {
  const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 0.0;
  return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

namespace {

Scores scores_from(const ConfusionCounts& counts) {
  Scores s;
  s.micro_f = f1(counts.pooled());
  double sum = 0;
  for (const ClassCounts& c : counts.per_class) {
    s.per_class_f.push_back(f1(c));
    sum += s.per_class_f.back();
  }
  s.macro_f = counts.per_class.empty() ? 0.0 : sum / static_cast<double>(counts.per_class.size());
  return s;
}

}  // namespace

ConfusionCounts scene_counts(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                             std::size_t n_classes) {
  if (predicted.empty()) throw InvalidInput("scene_scores: no clips");
  if (predicted.size() != truth.size()) throw ShapeError("scene_scores: prediction/truth length mismatch");
  ConfusionCounts counts{std::vector<ClassCounts>(n_classes)};
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] >= n_classes || truth[i] >= n_classes) {
      throw InvalidInput("scene_scores: class index out of range");
    }
    if (predicted[i] == truth[i]) {
      ++counts.per_class[truth[i]].tp;
    } else {
      ++counts.per_class[predicted[i]].fp;
      ++counts.per_class[truth[i]].fn;
    }
  }
  for (ClassCounts& c : counts.per_class) c.tn = predicted.size() - c.tp - c.fp - c.fn;
  return counts;
}

Scores scene_scores(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                    std::size_t n_classes) {
  return scores_from(scene_counts(predicted, truth, n_classes));
}

ConfusionCounts event_counts(const BinaryRoll& predicted, const BinaryRoll& truth) {
  require_rank(predicted, 2, "event prediction roll");
  require_shape(truth, predicted.shape(), "event truth roll");
  const std::size_t steps = predicted.dim(0), classes = predicted.dim(1);
  ConfusionCounts counts{std::vector<ClassCounts>(classes)};
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t m = 0; m < classes; ++m) {
      const bool p = predicted.at(t, m) != 0, z = truth.at(t, m) != 0;
      ClassCounts& c = counts.per_class[m];
      if (p && z) ++c.tp;
      else if (p) ++c.fp;
      else if (z) ++c.fn;
      else ++c.tn;
    }
  }
  return counts;
}

Scores event_frame_scores(const BinaryRoll& predicted, const BinaryRoll& truth) {
  return scores_from(event_counts(predicted, truth));
}

BinaryRoll rasterize_roll(std::span<const StrongEvent> events, std::size_t n_frames, double hop_s,
                          std::span<const std::string> vocabulary) {
  if (!(hop_s > 0)) throw InvalidInput("rasterize_roll: hop must be positive");
  BinaryRoll roll({n_frames, vocabulary.size()});
  for (const StrongEvent& e : events) {
    const auto it = std::find(vocabulary.begin(), vocabulary.end(), e.event);
    if (it == vocabulary.end()) throw VocabularyError("unknown event '" + e.event + "'");
    if (!(e.onset >= 0) || !(e.onset < e.offset)) {
      throw InvalidInput("event '" + e.event + "' has onset >= offset or a negative onset");
    }
    const auto m = static_cast<std::size_t>(it - vocabulary.begin());
    for (std::size_t t = 0; t < n_frames; ++t) {
      const double start = static_cast<double>(t) * hop_s;
      if (start < e.offset && start + hop_s > e.onset) roll.at(t, m) = 1;
    }
  }
  return roll;
}

std::string to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["scene_micro_f"] = r.scene_micro_f;
  j["scene_macro_f"] = r.scene_macro_f;
  j["event_micro_f"] = r.event_micro_f;
  j["event_macro_f"] = r.event_macro_f;
  j["per_event_f"] = nlohmann::ordered_json::object();
  for (const auto& [name, f] : r.per_event_f) j["per_event_f"][name] = f;
  return j.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    MetricsReport r;
    r.scene_micro_f = j.at("scene_micro_f").get<double>();
    r.scene_macro_f = j.at("scene_macro_f").get<double>();
    r.event_micro_f = j.at("event_micro_f").get<double>();
    r.event_macro_f = j.at("event_macro_f").get<double>();
    r.per_event_f = j.at("per_event_f").get<std::map<std::string, double>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  }
}

}  // namespace mtlsed::metrics
