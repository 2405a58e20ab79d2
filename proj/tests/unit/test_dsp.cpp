#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "doctest.h"
#include "mtlsed/dsp.hpp"
#include "support.hpp"

using namespace mtlsed;
using dsp::DspConfig;
using dsp::Waveform;

namespace {

Waveform noise(std::size_t n, std::uint64_t seed, double amp = 0.3) {
  auto gen = testing::rng(seed);
  std::uniform_real_distribution<double> u(-amp, amp);
  Waveform w;
  w.samples.resize(n);
  for (auto& s : w.samples) s = static_cast<float>(u(gen));
  return w;
}

// One frame by the textbook definition: reflect-pad, Hann window, direct DFT.
std::vector<std::complex<double>> dft_frame(const Waveform& w, const DspConfig& cfg, std::size_t t) {
  const std::size_t len = cfg.frame_length(), hop = cfg.hop_length(), nfft = cfg.resolved_fft_size();
  const auto n = static_cast<std::ptrdiff_t>(w.samples.size());
  std::vector<double> frame(nfft, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    std::ptrdiff_t j = static_cast<std::ptrdiff_t>(t * hop + i) - static_cast<std::ptrdiff_t>(len / 2);
    while (j < 0 || j >= n) j = j < 0 ? -j : 2 * (n - 1) - j;
    const double win = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(len));
    frame[i] = win * w.samples[static_cast<std::size_t>(j)];
  }
  std::vector<std::complex<double>> out(nfft / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0;
    for (std::size_t i = 0; i < nfft; ++i) {
      acc += frame[i] * std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k * i) / static_cast<double>(nfft));
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("frame count of a 10 s clip at 16 kHz is 500") {
  DspConfig cfg;
  CHECK(dsp::frame_count(160000, cfg) == 500);
  Waveform w = noise(160000, 1);
  CHECK(dsp::stft(w, cfg).n_frames == 500);
}

TEST_CASE("frame count is ceil(L / hop) for every length") {
  DspConfig cfg;
  auto gen = testing::rng(7);
  std::uniform_int_distribution<std::size_t> len(1, 200000);
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = len(gen);
    const auto expected = static_cast<std::size_t>(std::ceil(static_cast<double>(n) / 320.0));
    CHECK(dsp::frame_count(n, cfg) == expected);
  }
}

TEST_CASE("silence gives zero magnitudes and floor log energies") {
  DspConfig cfg;
  Waveform w;
  w.samples.assign(16000, 0.0f);
  const auto spec = dsp::stft(w, cfg);
  for (const auto& v : spec.values) CHECK(std::abs(v) == 0.0);
  const auto fm = dsp::log_mel_energy(w, cfg);
  const float floor_value = static_cast<float>(std::log(cfg.log_floor));
  for (float v : fm.data.storage()) CHECK(v == floor_value);
}

TEST_CASE("stft matches a direct DFT on selected frames") {
  DspConfig cfg;
  Waveform w = noise(4000, 3);
  const auto spec = dsp::stft(w, cfg);
  for (std::size_t t : {std::size_t{0}, std::size_t{5}, spec.n_frames - 1}) {
    const auto ref = dft_frame(w, cfg, t);
    double worst = 0;
    for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::abs(ref[k] - spec.at(t, k)));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("sine at a bin centre peaks in that bin and stays in the main lobe") {
  DspConfig cfg;
  const std::size_t nfft = cfg.resolved_fft_size(), bin = 64;
  const double freq = static_cast<double>(bin) * cfg.sample_rate / static_cast<double>(nfft);
  Waveform w;
  w.samples.resize(16000);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    w.samples[i] = static_cast<float>(0.5 * std::sin(2 * std::numbers::pi * freq * static_cast<double>(i) / cfg.sample_rate));
  }
  const auto spec = dsp::stft(w, cfg);
  const std::size_t t = 20;
  const auto ref = dft_frame(w, cfg, t);
  double total = 0, lobe = 0;
  std::size_t peak = 0;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    const double e = std::norm(spec.at(t, k));
    total += e;
    if (k + 2 >= bin && k <= bin + 2) lobe += e;
    if (e > std::norm(spec.at(t, peak))) peak = k;
    CHECK(std::abs(ref[k] - spec.at(t, k)) < 1e-8);
  }
  CHECK(peak == bin);
  CHECK(lobe / total >= 0.9);
}

TEST_CASE("mel filterbank rows are nonempty with increasing centres") {
  DspConfig cfg;
  const auto fb = dsp::mel_filterbank(cfg);
  REQUIRE(fb.shape() == Shape{64, 513});
  std::size_t prev_peak = 0;
  for (std::size_t m = 0; m < 64; ++m) {
    std::size_t peak = 0, nonzero = 0;
    for (std::size_t k = 0; k < 513; ++k) {
      if (fb.at(m, k) > 0) ++nonzero;
      if (fb.at(m, k) > fb.at(m, peak)) peak = k;
    }
    CHECK(nonzero >= 1);
    if (m > 0) CHECK(peak >= prev_peak);
    prev_peak = peak;
  }
  for (double hz : {0.0, 440.0, 1000.0, 8000.0}) CHECK(dsp::mel_to_hz(dsp::hz_to_mel(hz)) == doctest::Approx(hz));
  CHECK(dsp::hz_to_mel(1000.0) == doctest::Approx(1000.0).epsilon(1e-3));
}

TEST_CASE("filterbank applied to a flat spectrum gives row sums") {
  DspConfig cfg;
  cfg.n_mels = 40;
  const auto fb = dsp::mel_filterbank(cfg);
  Eigen::VectorXd flat = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(fb.dim(1)), 1.0);
  const Eigen::VectorXd bands = fb.matrix() * flat;
  for (std::size_t m = 0; m < fb.dim(0); ++m) {
    double sum = 0;
    for (std::size_t k = 0; k < fb.dim(1); ++k) sum += fb.at(m, k);
    CHECK(bands[static_cast<Eigen::Index>(m)] == doctest::Approx(sum).epsilon(1e-12));
  }
}

TEST_CASE("log mel energy of a 10 s clip is 500 x 64") {
  const auto fm = dsp::log_mel_energy(noise(160000, 4), DspConfig{});
  CHECK(fm.data.shape() == Shape{500, 64});
}

TEST_CASE("doubling the waveform adds log 4 above the floor") {
  DspConfig cfg;
  Waveform a = noise(8000, 5, 0.2);
  Waveform b = a;
  for (auto& s : b.samples) s *= 2.0f;
  const auto fa = dsp::log_mel_energy(a, cfg), fb = dsp::log_mel_energy(b, cfg);
  const double floor_log = std::log(cfg.log_floor);
  for (std::size_t i = 0; i < fa.data.size(); ++i) {
    if (fa.data[i] > floor_log + 1) CHECK(fb.data[i] - fa.data[i] == doctest::Approx(std::log(4.0)).epsilon(1e-4));
  }
}

TEST_CASE("trailing silence shorter than a hop only touches frames near the end") {
  DspConfig cfg;
  Waveform a = noise(6400, 6);
  Waveform b = a;
  b.samples.resize(a.samples.size() + 100, 0.0f);
  const auto fa = dsp::log_mel_energy(a, cfg), fb = dsp::log_mel_energy(b, cfg);
  REQUIRE(fa.n_frames() + 1 == fb.n_frames());
  // Frames whose window (centre +- 320 samples) ends before the original end are unaffected.
  const std::size_t untouched = (a.samples.size() - cfg.frame_length() / 2) / cfg.hop_length();
  for (std::size_t t = 0; t < untouched; ++t) {
    for (std::size_t d = 0; d < fa.n_bins(); ++d) CHECK(fa.data.at(t, d) == fb.data.at(t, d));
  }
}

TEST_CASE("feature extraction is deterministic") {
  const auto w = noise(32000, 8);
  CHECK(dsp::log_mel_energy(w, DspConfig{}) == dsp::log_mel_energy(w, DspConfig{}));
}

TEST_CASE("wav and feature files round-trip") {
  testing::TempDir dir("dsp");
  Waveform w = noise(1234, 9);
  for (auto& s : w.samples) s = std::round(s * 32768.0f) / 32768.0f;
  dsp::write_wav(dir / "a.wav", w);
  const auto r = dsp::read_wav(dir / "a.wav");
  REQUIRE(r.samples.size() == w.samples.size());
  CHECK(r.sample_rate == w.sample_rate);
  for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(r.samples[i] == w.samples[i]);

  const auto fm = dsp::log_mel_energy(w, DspConfig{});
  dsp::write_features(dir / "a.lmel", fm);
  CHECK(dsp::read_features(dir / "a.lmel") == fm);
  CHECK(dsp::load_feature_source(dir / "a.lmel", DspConfig{}) == fm);
  CHECK(dsp::load_feature_source(dir / "a.wav", DspConfig{}) == dsp::log_mel_energy(r, DspConfig{}));
}

TEST_CASE("bad input is rejected") {
  DspConfig cfg;
  Waveform w = noise(100, 1);
  w.sample_rate = 44100;
  CHECK_THROWS_AS(dsp::stft(w, cfg), InvalidInput);
  CHECK_THROWS_AS(dsp::stft(Waveform{}, cfg), InvalidInput);
  cfg.n_mels = 600;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  testing::TempDir dir("dspbad");
  CHECK_THROWS_AS(dsp::read_features(dir / "missing.lmel"), IoError);
}
