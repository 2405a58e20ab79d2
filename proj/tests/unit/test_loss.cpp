#include <cmath>

#include "doctest.h"
#include "laws.hpp"
#include "mtlsed/gradcheck.hpp"
#include "mtlsed/loss.hpp"
#include "support.hpp"

using namespace mtlsed;
using namespace mtlsed::loss;
using T = Tensor<double>;
using V = std::vector<double>;

TEST_CASE("pinpoint values") {
  for (const auto& p : testing::loss_pinpoints()) {
    INFO(p.name);
    CHECK(std::abs(p.value - p.expected) < 1e-6);
  }
  CHECK(testing::loss_pinpoints()[0].value == doctest::Approx(0.5108).epsilon(1e-4));
  CHECK(testing::loss_pinpoints()[1].value == doctest::Approx(1.3863).epsilon(1e-4));
  CHECK(testing::loss_pinpoints()[2].value == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(testing::loss_pinpoints()[3].value == doctest::Approx(0.3285).epsilon(1e-3));
  CHECK(testing::loss_pinpoints()[4].value == doctest::Approx(0.7278).epsilon(1e-4));
}

TEST_CASE("perfect predictions cost almost nothing") {
  CHECK(scene_ce<double>(V{0, 0, 1, 0}, one_hot(4, 2)) < 1.2e-7);
  T roll({3, 2}, std::vector<double>{1, 0, 0, 1, 1, 1});
  CHECK(event_bce_strong(roll, roll) < 6 * 1.2e-7);
  const T weak({2}, std::vector<double>{1, 0});
  T frames({4, 2});
  for (std::size_t t = 0; t < 4; ++t) frames.at(t, 0) = 1;
  CHECK(event_weak_loss(frames, weak, weak, 0.5, 0.05) < 1e-5);
}

TEST_CASE("weak loss with gamma 0 is the scaled bag BCE") {
  auto gen = testing::rng(1);
  const T frames = testing::uniform({5, 3}, gen, 0.05, 0.95), bag = testing::uniform({3}, gen, 0.05, 0.95);
  const T weak({3}, std::vector<double>{1, 0, 1});
  const double zeta = 0.05;
  CHECK(event_weak_loss(frames, bag, weak, 0.0, zeta) ==
        doctest::Approx(zeta * event_bce_strong(bag.reshaped({1, 3}), weak.reshaped({1, 3}))).epsilon(1e-12));
}

TEST_CASE("weighted total") {
  LossWeights w;
  w.alpha = 0;
  CHECK(total_loss(2.0, 3.0, w) == 3.0);
  w = LossWeights{};
  CHECK(total_loss(2.0, 3.0, w) == doctest::Approx(3.002).epsilon(1e-12));
  LossWeights scaled = w;
  scaled.alpha *= 4;
  scaled.beta *= 4;
  CHECK(total_loss(2.0, 3.0, scaled) == doctest::Approx(4 * 3.002).epsilon(1e-12));
  w.zeta = -1;
  CHECK_THROWS_AS(w.validate(), InvalidConfig);
}

TEST_CASE("losses are non-negative, finite and monotone for a positive class") {
  auto gen = testing::rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const T p = testing::uniform({4, 3}, gen, 0.0, 1.0), z = testing::uniform({4, 3}, gen, 0.0, 1.0);
    T zr(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) zr[i] = std::round(z[i]);
    const double l = event_bce_strong(p, zr);
    CHECK(l >= 0.0);
    CHECK(std::isfinite(l));
  }
  CHECK(std::isfinite(bce(0.0, 1.0)));
  CHECK(std::isfinite(bce(1.0, 0.0)));
  double prev = bce(0.01, 1.0);
  for (double p = 0.02; p < 1.0; p += 0.01) {
    const double cur = bce(p, 1.0);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("loss gradients match finite differences") {
  auto gen = testing::rng(4);
  const double h = 1e-6;
  const T p = testing::uniform({3, 2}, gen, 0.05, 0.95);
  const T roll({3, 2}, std::vector<double>{1, 0, 0, 1, 1, 1});
  const T g = event_bce_strong_grad(p, roll);
  for (std::size_t i = 0; i < p.size(); ++i) {
    T a = p, b = p;
    a[i] += h;
    b[i] -= h;
    const double fd = (event_bce_strong(a, roll) - event_bce_strong(b, roll)) / (2 * h);
    CHECK(std::abs(g[i] - fd) < 1e-6 * std::max(1.0, std::abs(fd)));
  }
  const V probs{0.2, 0.5, 0.3};
  const V target = one_hot(3, 1);
  const V gs = scene_ce_grad<double>(probs, target);
  for (std::size_t i = 0; i < 3; ++i) {
    V a = probs, b = probs;
    a[i] += h;
    b[i] -= h;
    CHECK(std::abs(gs[i] - (scene_ce<double>(a, target) - scene_ce<double>(b, target)) / (2 * h)) < 1e-6);
  }
  for (const char* op : {"loss_scene_ce", "loss_event_strong", "loss_event_weak"}) {
    INFO(op);
    CHECK(gradcheck::check_op(op, 20).passed());
  }
}

TEST_CASE("shape checks") {
  CHECK_THROWS_AS(scene_ce<double>(V{0.5, 0.5}, V{1, 0, 0}), ShapeError);
  CHECK_THROWS_AS(event_bce_strong(T({2, 2}), T({2, 3})), ShapeError);
  CHECK_THROWS_AS(event_weak_loss(T({2, 2}), T({3}), T({2}), 0.5, 0.05), ShapeError);
  CHECK_THROWS_AS(one_hot(3, 3), InvalidInput);
}
