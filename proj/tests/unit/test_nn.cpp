#include <cmath>

#include "doctest.h"
#include "mtlsed/gradcheck.hpp"
#include "mtlsed/nn/activation.hpp"
#include "mtlsed/nn/batch_norm.hpp"
#include "mtlsed/nn/conv.hpp"
#include "mtlsed/nn/gru.hpp"
#include "mtlsed/nn/linear.hpp"
#include "mtlsed/nn/pooling.hpp"
#include "support.hpp"

using namespace mtlsed;
using namespace mtlsed::nn;
using T = Tensor<double>;

namespace {

T conv_oracle(const T& x, const T& w) {
  const std::size_t n = x.dim(0), ci = x.dim(1), t = x.dim(2), f = x.dim(3);
  const std::size_t co = w.dim(0), kt = w.dim(2), kf = w.dim(3);
  T y({n, co, t, f});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < f; ++j) {
          double acc = 0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t a = 0; a < kt; ++a)
              for (std::size_t e = 0; e < kf; ++e) {
                const auto ii = static_cast<std::ptrdiff_t>(i + a) - static_cast<std::ptrdiff_t>(kt / 2);
                const auto jj = static_cast<std::ptrdiff_t>(j + e) - static_cast<std::ptrdiff_t>(kf / 2);
                if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(t) || jj >= static_cast<std::ptrdiff_t>(f)) continue;
                acc += x.at(b, c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) * w.at(o, c, a, e);
              }
          y.at(b, o, i, j) = acc;
        }
  return y;
}

double max_abs_diff(const T& a, const T& b) {
  REQUIRE(a.shape() == b.shape());
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar recurrence for one direction, straight from the gate equations.
std::vector<std::vector<double>> gru_oracle(const T& x, const GruDirection<double>& p, bool reverse) {
  const std::size_t steps = x.dim(0), d = x.dim(1), h = p.hidden();
  std::vector<std::vector<double>> out(steps, std::vector<double>(h));
  std::vector<double> state(h, 0.0);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    std::vector<double> z(h), r(h), nn(h), next(h);
    for (std::size_t k = 0; k < h; ++k) {
      double az = p.bias[k], ar = p.bias[h + k];
      for (std::size_t i = 0; i < d; ++i) {
        az += p.w_input.at(k, i) * x.at(t, i);
        ar += p.w_input.at(h + k, i) * x.at(t, i);
      }
      for (std::size_t j = 0; j < h; ++j) {
        az += p.w_hidden.at(k, j) * state[j];
        ar += p.w_hidden.at(h + k, j) * state[j];
      }
      z[k] = sig(az);
      r[k] = sig(ar);
    }
    for (std::size_t k = 0; k < h; ++k) {
      double an = p.bias[2 * h + k];
      for (std::size_t i = 0; i < d; ++i) an += p.w_input.at(2 * h + k, i) * x.at(t, i);
      for (std::size_t j = 0; j < h; ++j) an += p.w_hidden.at(2 * h + k, j) * r[j] * state[j];
      nn[k] = std::tanh(an);
      next[k] = (1 - z[k]) * state[k] + z[k] * nn[k];
    }
    state = next;
    out[t] = state;
  }
  return out;
}

GruDirection<double> random_gru(std::size_t d, std::size_t h, std::mt19937_64& gen) {
  return {testing::uniform({3 * h, d}, gen), testing::uniform({3 * h, h}, gen), testing::uniform({3 * h}, gen)};
}

}  // namespace

TEST_CASE("conv2d identity and zero kernels") {
  auto gen = testing::rng(1);
  const T x = testing::uniform({2, 1, 5, 6}, gen);
  T id({1, 1, 3, 3});
  id.at(0, 0, 1, 1) = 1;
  CHECK(conv2d_forward(x, id) == x);
  const T y = conv2d_forward(x, T({3, 1, 3, 3}));
  for (double v : y.storage()) CHECK(v == 0.0);
}

TEST_CASE("conv2d matches a nested-loop oracle") {
  auto gen = testing::rng(2);
  const T x = testing::uniform({1, 1, 5, 5}, gen), w = testing::uniform({1, 1, 3, 3}, gen);
  CHECK(max_abs_diff(conv2d_forward(x, w), conv_oracle(x, w)) < 1e-14);
  const T x2 = testing::uniform({2, 3, 6, 4}, gen), w2 = testing::uniform({4, 3, 3, 5}, gen);
  CHECK(max_abs_diff(conv2d_forward(x2, w2), conv_oracle(x2, w2)) < 1e-13);
}

TEST_CASE("conv2d and linear are linear in their input") {
  auto gen = testing::rng(3);
  const T x = testing::uniform({2, 2, 4, 4}, gen), y = testing::uniform({2, 2, 4, 4}, gen);
  const T w = testing::uniform({3, 2, 3, 3}, gen);
  const double a = 0.7, b = -1.3;
  T mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * y[i];
  const T fx = conv2d_forward(x, w), fy = conv2d_forward(y, w), fm = conv2d_forward(mix, w);
  for (std::size_t i = 0; i < fm.size(); ++i) CHECK(std::abs(fm[i] - (a * fx[i] + b * fy[i])) < 1e-5);

  const T lx = testing::uniform({4, 5}, gen), ly = testing::uniform({4, 5}, gen), lw = testing::uniform({3, 5}, gen);
  const T zero_b({3});
  T lmix(lx.shape());
  for (std::size_t i = 0; i < lx.size(); ++i) lmix[i] = a * lx[i] + b * ly[i];
  const T gx = linear_forward(lx, lw, zero_b), gy = linear_forward(ly, lw, zero_b), gm = linear_forward(lmix, lw, zero_b);
  for (std::size_t i = 0; i < gm.size(); ++i) CHECK(std::abs(gm[i] - (a * gx[i] + b * gy[i])) < 1e-5);
}

TEST_CASE("batch norm train mode standardizes each channel") {
  auto gen = testing::rng(4);
  const T x = testing::uniform({4, 3, 5, 2}, gen, -3, 5);
  const T gamma({3}, std::vector<double>{2.0, 0.5, 1.5}), beta({3}, std::vector<double>{-1.0, 0.0, 3.0});
  const auto out = batch_norm_forward(x, gamma, beta, T({3}), T({3}, 1.0), Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0, count = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t f = 0; f < 2; ++f) {
          sum += out.y.at(n, c, t, f);
          count += 1;
        }
    const double mean = sum / count;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t f = 0; f < 2; ++f) sq += std::pow(out.y.at(n, c, t, f) - mean, 2);
    CHECK(mean == doctest::Approx(beta[c]).epsilon(1e-5));
    CHECK(std::sqrt(sq / count) == doctest::Approx(gamma[c]).epsilon(1e-5));
  }
}

TEST_CASE("batch norm leaves standardized input alone with unit scale") {
  const T x({4, 1}, std::vector<double>{-1.0, 1.0, -1.0, 1.0});
  const auto out = batch_norm_forward(x, T({1}, 1.0), T({1}), T({1}), T({1}, 1.0), Mode::train);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.y[i] == doctest::Approx(x[i]).epsilon(1e-5));
}

TEST_CASE("batch norm eval mode uses running statistics") {
  const T x({2, 1}, std::vector<double>{0.5, 2.0});
  const T mean({1}, 1.0), var({1}, 4.0), gamma({1}, 3.0), beta({1}, 0.25);
  const auto out = batch_norm_forward(x, gamma, beta, mean, var, Mode::eval);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(out.y[i] == doctest::Approx((x[i] - 1.0) / std::sqrt(4.0 + 1e-5) * 3.0 + 0.25).epsilon(1e-12));
  }
  T rm({1}), rv({1}, 1.0);
  update_running_stats(rm, rv, std::vector<double>{2.0}, std::vector<double>{3.0});
  CHECK(rm[0] == doctest::Approx(0.2));
  CHECK(rv[0] == doctest::Approx(1.2));
}

TEST_CASE("leaky relu values and slope") {
  const T x({2}, std::vector<double>{3.0, -2.0});
  const T y = leaky_relu_forward(x);
  CHECK(y[0] == 3.0);
  CHECK(y[1] == doctest::Approx(-0.02));
  const double h = 1e-6, at = -0.7;
  const double fd = (leaky_relu_forward(T({1}, at + h))[0] - leaky_relu_forward(T({1}, at - h))[0]) / (2 * h);
  const T g = leaky_relu_backward(T({1}, at), T({1}, 1.0));
  CHECK(g[0] == doctest::Approx(fd).epsilon(1e-6));
  CHECK(g[0] == doctest::Approx(0.01));
}

TEST_CASE("max pool shapes, constants and a loop oracle") {
  T big({1, 1, 500, 64}, 0.0);
  CHECK(max_pool2d_forward(big, 1, 8).y.shape() == Shape{1, 1, 500, 8});
  const T flat({1, 2, 4, 4}, 1.5);
  const auto pooled = max_pool2d_forward(flat, 2, 2);
  for (double v : pooled.y.storage()) CHECK(v == 1.5);

  auto gen = testing::rng(5);
  const T x = testing::uniform({1, 1, 4, 4}, gen);
  const auto out = max_pool2d_forward(x, 2, 2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double best = -1e300;
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) best = std::max(best, x.at(0, 0, 2 * i + a, 2 * j + b));
      CHECK(out.y.at(0, 0, i, j) == best);
    }
}

TEST_CASE("max pool backward is one-hot per window") {
  auto gen = testing::rng(6);
  const T x = testing::uniform({2, 3, 4, 6}, gen);
  const auto out = max_pool2d_forward(x, 2, 3);
  const T dx = max_pool2d_backward(x.shape(), out.argmax, T(out.y.shape(), 1.0));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
          int nonzero = 0;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 3; ++b) nonzero += dx.at(n, c, 2 * i + a, 3 * j + b) != 0.0;
          CHECK(nonzero == 1);
        }
}

TEST_CASE("global max pool") {
  T spike({1, 1, 3, 3}, 0.0);
  spike.at(0, 0, 1, 2) = 4.0;
  CHECK(global_max_pool_forward(spike).y[0] == 4.0);
  CHECK(global_max_pool_forward(T({1, 2, 3, 3}, -0.5)).y == T({1, 2}, -0.5));
  auto gen = testing::rng(7);
  const T x = testing::uniform({2, 3, 4, 5}, gen);
  const auto out = global_max_pool_forward(x);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      double best = -1e300;
      for (std::size_t i = 0; i < 20; ++i) best = std::max(best, x[(n * 3 + c) * 20 + i]);
      CHECK(out.y.at(n, c) == best);
    }
}

TEST_CASE("gru with zero input and zero params stays at zero") {
  const GruDirection<double> p{T({6, 3}), T({6, 2}), T({6})};
  const auto out = bigru_forward(T({4, 3}), p, p);
  for (double v : out.y.storage()) CHECK(v == 0.0);
}

TEST_CASE("gru with one frame runs each direction on it independently") {
  auto gen = testing::rng(8);
  const T x = testing::uniform({1, 3}, gen);
  const auto f = random_gru(3, 2, gen), b = random_gru(3, 2, gen);
  const auto out = bigru_forward(x, f, b);
  const auto of = gru_oracle(x, f, false), ob = gru_oracle(x, b, true);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(out.y.at(0, k) == doctest::Approx(of[0][k]).epsilon(1e-12));
    CHECK(out.y.at(0, 2 + k) == doctest::Approx(ob[0][k]).epsilon(1e-12));
  }
}

TEST_CASE("bidirectional gru matches a per-step scalar oracle") {
  auto gen = testing::rng(9);
  const T x = testing::uniform({3, 4}, gen);
  const auto f = random_gru(4, 2, gen), b = random_gru(4, 2, gen);
  const auto out = bigru_forward(x, f, b);
  const auto of = gru_oracle(x, f, false), ob = gru_oracle(x, b, true);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(std::abs(out.y.at(t, k) - of[t][k]) < 1e-6);
      CHECK(std::abs(out.y.at(t, 2 + k) - ob[t][k]) < 1e-6);
    }
}

TEST_CASE("linear layer special cases and oracle") {
  auto gen = testing::rng(10);
  const T x = testing::uniform({2, 3}, gen);
  T eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1;
  CHECK(linear_forward(x, eye, T({3})) == x);
  const T b({2}, std::vector<double>{0.5, -1.0});
  const T y0 = linear_forward(x, T({2, 3}), b);
  for (std::size_t r = 0; r < 2; ++r) CHECK(y0.at(r, 0) == 0.5);
  const T w = testing::uniform({2, 3}, gen);
  const T y = linear_forward(x, w, b);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t o = 0; o < 2; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < 3; ++i) acc += x.at(r, i) * w.at(o, i);
      CHECK(y.at(r, o) == doctest::Approx(acc).epsilon(1e-15));
    }
}

TEST_CASE("softmax values, shift invariance and normalization") {
  const T u = softmax_forward(T({4}, 0.3));
  for (double v : u.storage()) CHECK(v == doctest::Approx(0.25));
  const T p = softmax_forward(T({2}, std::vector<double>{0.0, 1.0}));
  CHECK(p[0] == doctest::Approx(1 / (1 + std::exp(1.0))).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(std::exp(1.0) / (1 + std::exp(1.0))).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.26894).epsilon(1e-5));

  auto gen = testing::rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const T x = testing::uniform({3, 7}, gen, -20, 20);
    T shifted = x;
    for (auto& v : shifted.storage()) v += 12.5;
    const T a = softmax_forward(x), b = softmax_forward(shifted);
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0;
      for (std::size_t k = 0; k < 7; ++k) {
        CHECK(a.at(r, k) > 0.0);
        CHECK(std::abs(a.at(r, k) - b.at(r, k)) < 1e-7);
        sum += a.at(r, k);
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("sigmoid values and symmetry") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(2.0) == doctest::Approx(0.880797).epsilon(1e-6));
  for (double x : {-30.0, -3.0, -0.1, 0.4, 7.0, 40.0}) CHECK(std::abs(sigmoid(x) + sigmoid(-x) - 1.0) < 1e-7);
}

TEST_CASE("finite-difference checks of the layer kernels") {
  CHECK(gradcheck::grad_check("linear", 0) < 1e-6);
  CHECK(gradcheck::grad_check("conv2d", 0) < 1e-4);
  CHECK(gradcheck::grad_check("gru_bidirectional", 0) < 1e-4);
  for (const char* op : {"conv2d", "batch_norm_train", "batch_norm_eval", "leaky_relu", "max_pool2d",
                         "global_max_pool", "gru_bidirectional", "linear", "softmax", "sigmoid"}) {
    const auto report = gradcheck::check_op(op, 20);
    INFO(op);
    CHECK(report.passed());
    CHECK(report.seeds == 20);
  }
}

TEST_CASE("shape errors are reported") {
  CHECK_THROWS_AS(linear_forward(T({2, 3}), T({2, 4}), T({2})), ShapeError);
  CHECK_THROWS_AS(max_pool2d_forward(T({1, 1, 5, 4}), 2, 2), ShapeError);
  CHECK_THROWS_AS(conv2d_forward(T({1, 2, 4, 4}), T({1, 3, 3, 3})), ShapeError);
}
