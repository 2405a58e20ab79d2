#include <cmath>

#include "doctest.h"
#include "mtlsed/gradcheck.hpp"
#include "mtlsed/model.hpp"
#include "support.hpp"

using namespace mtlsed;
using namespace mtlsed::model;
using T = Tensor<double>;

namespace {

T tiny_features(std::size_t batch, std::uint64_t seed) {
  auto gen = testing::rng(seed);
  const auto a = ArchConfig::tiny();
  return testing::uniform({batch, a.n_frames, a.n_mels}, gen, -2, 2);
}

double max_abs(const T& t) {
  double m = 0;
  for (double v : t.storage()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

TEST_CASE("default architecture reproduces the reference dimensions") {
  const ArchConfig cfg = ArchConfig::full_size();
  const ShapeTrace s = shape_trace(cfg);
  CHECK(s.input == Shape{500, 64});
  CHECK(s.shared_output == Shape{128, 500, 2});
  CHECK(s.scene_pooled_time == 20);
  CHECK(s.scene_output == Shape{4});
  CHECK(s.event_features == Shape{500, 64});
  CHECK(s.frame_logits == Shape{500, 25});
  CHECK(s.bag_logits == Shape{25});
}

TEST_CASE("default architecture forward produces the traced shapes") {
  const ArchConfig cfg = ArchConfig::full_size();
  const auto params = init_params<float>(cfg, PoolingKind::attention, 3);
  Tensor<float> x({1, 500, 64});
  auto gen = testing::rng(3);
  for (auto& v : x.storage()) v = static_cast<float>(std::normal_distribution<double>()(gen));
  const auto r = forward(cfg, params, x, PoolingKind::attention, Mode::eval);
  CHECK(r.cache.shared_output.shape() == Shape{1, 128, 500, 2});
  CHECK(r.output.scene_probs.shape() == Shape{1, 4});
  CHECK(r.output.frame_probs.shape() == Shape{1, 500, 25});
  CHECK(r.output.bag_probs.shape() == Shape{1, 25});
}

TEST_CASE("architecture validation") {
  ArchConfig cfg = ArchConfig::full_size();
  cfg.n_mels = 60;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = ArchConfig::full_size();
  cfg.n_frames = 510;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = ArchConfig::full_size();
  cfg.n_events = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  CHECK_NOTHROW(ArchConfig::tiny().validate());
  const auto a = ArchConfig::tiny();
  const auto params = init_params<double>(a, std::nullopt, 0);
  CHECK_THROWS_AS(forward(a, params, T({1, a.n_frames + 2, a.n_mels}), std::nullopt, Mode::eval), ShapeError);
  CHECK_THROWS_AS(forward(a, params, tiny_features(1, 0), PoolingKind::attention, Mode::eval), ShapeError);
}

TEST_CASE("initialization is seeded and bounded") {
  const ArchConfig cfg = ArchConfig::full_size();
  const auto a = init_params<float>(cfg, PoolingKind::attention, 42);
  CHECK(a == init_params<float>(cfg, PoolingKind::attention, 42));
  CHECK_FALSE(a == init_params<float>(cfg, PoolingKind::attention, 43));
  for (const auto& e : a.entries()) {
    if (e.name.find("weight") == std::string::npos && e.name.find("w_") == std::string::npos) continue;
    const auto& s = e.value.shape();
    const std::size_t receptive = s.size() == 4 ? s[2] * s[3] : 1;
    const double bound = std::sqrt(6.0 / static_cast<double>(s[1] * receptive + s[0] * receptive));
    double worst = 0;
    for (float v : e.value.storage()) worst = std::max(worst, std::abs(static_cast<double>(v)));
    INFO(e.name);
    CHECK(worst <= bound);
    CHECK(worst > 0.5 * bound);
  }
  CHECK(a.contains("event.attention.weight"));
  CHECK_FALSE(init_params<float>(cfg, PoolingKind::max, 42).contains("event.attention.weight"));
  CHECK(init_params<double>(cfg, std::nullopt, 1).cast<float>() == init_params<float>(cfg, std::nullopt, 1));
}

TEST_CASE("eval forward is deterministic and probabilities are consistent") {
  const auto cfg = ArchConfig::tiny();
  for (PoolingKind kind : milpool::kAllPoolings) {
    const auto params = init_params<double>(cfg, kind, 5);
    const T x = tiny_features(3, 5);
    const auto a = forward(cfg, params, x, kind, Mode::eval);
    const auto b = forward(cfg, params, x, kind, Mode::eval);
    CHECK(a.output.scene_probs == b.output.scene_probs);
    CHECK(a.output.frame_probs == b.output.frame_probs);
    CHECK(a.output.bag_probs == b.output.bag_probs);
    for (std::size_t n = 0; n < 3; ++n) {
      double sum = 0;
      for (std::size_t s = 0; s < cfg.n_scenes; ++s) sum += a.output.scene_probs.at(n, s);
      CHECK(std::abs(sum - 1.0) < 1e-6);
      for (std::size_t m = 0; m < cfg.n_events; ++m) {
        double lo = 1, hi = 0, mean_logit = 0;
        for (std::size_t t = 0; t < cfg.n_frames; ++t) {
          lo = std::min(lo, a.output.frame_probs.at(n, t, m));
          hi = std::max(hi, a.output.frame_probs.at(n, t, m));
          mean_logit += a.output.frame_logits.at(n, t, m) / static_cast<double>(cfg.n_frames);
        }
        CHECK(a.output.bag_probs.at(n, m) >= lo - 1e-12);
        CHECK(a.output.bag_probs.at(n, m) <= hi + 1e-12);
        if (kind == PoolingKind::average) CHECK(std::abs(a.output.bag_logits.at(n, m) - mean_logit) < 1e-6);
      }
    }
  }
}

TEST_CASE("single-task forwards equal the matching part of the full model") {
  const auto cfg = ArchConfig::tiny();
  const auto params = init_params<double>(cfg, PoolingKind::attention, 6);
  const T x = tiny_features(2, 6);
  for (Mode mode : {Mode::eval, Mode::train}) {
    const auto full = forward(cfg, params, x, PoolingKind::attention, mode);
    const auto asc = forward_single_task(cfg, params, x, Task::asc, PoolingKind::attention, mode);
    const auto sed = forward_single_task(cfg, params, x, Task::sed, PoolingKind::attention, mode);
    CHECK(asc.output.scene_probs == full.output.scene_probs);
    CHECK(sed.output.frame_probs == full.output.frame_probs);
    CHECK(sed.output.bag_probs == full.output.bag_probs);
  }
}

TEST_CASE("backward reachability") {
  const auto cfg = ArchConfig::tiny();
  const auto params = init_params<double>(cfg, PoolingKind::attention, 7);
  const T x = tiny_features(2, 7);
  const auto fwd = forward(cfg, params, x, PoolingKind::attention, Mode::train);
  auto gen = testing::rng(7);

  OutputGrads<double> scene_only;
  scene_only.scene_probs = testing::uniform(fwd.output.scene_probs.shape(), gen);
  const auto gs = backward(cfg, params, fwd.cache, scene_only);
  OutputGrads<double> event_only;
  event_only.frame_probs = testing::uniform(fwd.output.frame_probs.shape(), gen);
  event_only.bag_probs = testing::uniform(fwd.output.bag_probs.shape(), gen);
  const auto ge = backward(cfg, params, fwd.cache, event_only);
  OutputGrads<double> both = event_only;
  both.scene_probs = scene_only.scene_probs;
  const auto gb = backward(cfg, params, fwd.cache, both);

  for (std::size_t i = 0; i < gs.size(); ++i) {
    const auto& name = gs.entries()[i].name;
    INFO(name);
    if (is_event_param(name)) CHECK(max_abs(gs.entries()[i].value) == 0.0);
    if (is_scene_param(name)) CHECK(max_abs(ge.entries()[i].value) == 0.0);
    const T& sum_part = gb.entries()[i].value;
    for (std::size_t k = 0; k < sum_part.size(); ++k) {
      CHECK(std::abs(sum_part[k] - (gs.entries()[i].value[k] + ge.entries()[i].value[k])) < 1e-6);
    }
  }

  const auto gz = backward(cfg, params, fwd.cache,
                           OutputGrads<double>{T(fwd.output.scene_probs.shape()), T(fwd.output.frame_probs.shape()),
                                               T(fwd.output.bag_probs.shape())});
  for (const auto& e : gz.entries()) CHECK(max_abs(e.value) == 0.0);
  CHECK(gz.size() == params.size());
}

TEST_CASE("train mode produces running statistic updates") {
  const auto cfg = ArchConfig::tiny();
  auto params = init_params<double>(cfg, std::nullopt, 8);
  const auto fwd = forward(cfg, params, tiny_features(4, 8), std::nullopt, Mode::train);
  CHECK_FALSE(fwd.running_updates.empty());
  const T before = params["shared.block0.bn.running_mean"];
  apply_running_updates(params, fwd);
  CHECK_FALSE(params["shared.block0.bn.running_mean"] == before);
  CHECK(forward(cfg, params, tiny_features(4, 8), std::nullopt, Mode::eval).running_updates.empty());
}

TEST_CASE("full tiny model passes the finite-difference check") {
  const auto rep = gradcheck::check_op("model_tiny", 20);
  CHECK(rep.seeds == 20);
  CHECK(rep.max_rel_error < 1e-3);
}
