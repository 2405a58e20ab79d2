#include "mtlsed/dsp.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "mtlsed/binary_io.hpp"

namespace mtlsed::dsp {

namespace {

std::size_t ms_to_samples(double ms, std::uint32_t sample_rate) {
  return static_cast<std::size_t>(std::llround(ms * sample_rate / 1000.0));
}

// Mirror index into [0, n) without repeating the edge sample.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

}  // namespace

std::size_t DspConfig::frame_length() const { return ms_to_samples(frame_len_ms, sample_rate); }

std::size_t DspConfig::hop_length() const { return ms_to_samples(hop_ms, sample_rate); }

std::size_t DspConfig::resolved_fft_size() const {
  if (fft_size != 0) return fft_size;
  std::size_t n = 1;
  while (n < frame_length()) n <<= 1;
  return n;
}

void DspConfig::validate() const {
  if (sample_rate == 0) throw InvalidConfig("sample_rate must be positive");
  if (frame_len_ms <= 0 || hop_ms <= 0) throw InvalidConfig("frame_len_ms and hop_ms must be positive");
  if (hop_ms > frame_len_ms) throw InvalidConfig("hop_ms must not exceed frame_len_ms");
  if (hop_length() == 0) throw InvalidConfig("hop is shorter than one sample");
  if (fft_size != 0 && fft_size < frame_length()) {
    throw InvalidConfig("fft_size " + std::to_string(fft_size) + " is shorter than the frame (" +
                        std::to_string(frame_length()) + " samples)");
  }
  if (n_mels == 0) throw InvalidConfig("n_mels must be positive");
  if (n_mels > resolved_fft_size() / 2) {
    throw InvalidConfig("n_mels " + std::to_string(n_mels) + " exceeds fft_size/2 = " +
                        std::to_string(resolved_fft_size() / 2));
  }
  if (!(log_floor > 0)) throw InvalidConfig("log_floor must be positive");
}

std::size_t frame_count(std::size_t n_samples, const DspConfig& cfg) {
  const std::size_t hop = cfg.hop_length();
  return (n_samples + hop - 1) / hop;
}

Spectrogram stft(const Waveform& w, const DspConfig& cfg) {
  cfg.validate();
  if (w.samples.empty()) throw InvalidInput("stft: empty waveform");
  if (w.sample_rate != cfg.sample_rate) {
    throw InvalidInput("stft: waveform sample rate " + std::to_string(w.sample_rate) +
                       " Hz does not match configured " + std::to_string(cfg.sample_rate) + " Hz");
  }

  const std::size_t frame_len = cfg.frame_length();
  const std::size_t hop = cfg.hop_length();
  const std::size_t nfft = cfg.resolved_fft_size();
  const std::size_t n = w.samples.size();
  const auto pad = static_cast<std::ptrdiff_t>(frame_len / 2);
  const std::vector<double> window = hann_window(frame_len);

  Spectrogram spec;
  spec.n_frames = frame_count(n, cfg);
  spec.n_bins = nfft / 2 + 1;
  spec.values.resize(spec.n_frames * spec.n_bins);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(nfft, 0.0);
  std::vector<std::complex<double>> bins;
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    const auto start = static_cast<std::ptrdiff_t>(t * hop) - pad;
    for (std::size_t i = 0; i < frame_len; ++i) {
      frame[i] = window[i] * w.samples[reflect_index(start + static_cast<std::ptrdiff_t>(i), n)];
    }
    fft.fwd(bins, frame);
    std::copy(bins.begin(), bins.begin() + static_cast<std::ptrdiff_t>(spec.n_bins),
              spec.values.begin() + static_cast<std::ptrdiff_t>(t * spec.n_bins));
  }
  return spec;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor<double> mel_filterbank(const DspConfig& cfg) {
  cfg.validate();
  const std::size_t nfft = cfg.resolved_fft_size();
  const std::size_t n_bins = nfft / 2 + 1;
  const double nyquist = cfg.sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);

  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }

  Tensor<double> fb({cfg.n_mels, n_bins});
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], centre = edges[m + 1], hi = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(nfft);
      const double rise = (f - lo) / (centre - lo);
      const double fall = (hi - f) / (hi - centre);
      const double v = std::max(0.0, std::min(rise, fall));
      fb.at(m, k) = v;
      any = any || v > 0.0;
    }
    if (!any) {
      throw InvalidConfig("mel filter " + std::to_string(m) +
                          " covers no FFT bin; reduce n_mels or increase fft_size");
    }
  }
  return fb;
}

FeatureMap log_mel_energy(const Waveform& w, const DspConfig& cfg) {
  const Spectrogram spec = stft(w, cfg);
  const Tensor<double> fb = mel_filterbank(cfg);

  RowMatrix<double> power(spec.n_frames, spec.n_bins);
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    for (std::size_t k = 0; k < spec.n_bins; ++k) power(t, k) = std::norm(spec.at(t, k));
  }
  const RowMatrix<double> mel = power * fb.matrix().transpose();

  FeatureMap out{Tensor<float>({spec.n_frames, cfg.n_mels})};
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      out.data.at(t, m) = static_cast<float>(std::log(std::max(mel(t, m), cfg.log_floor)));
    }
  }
  return out;
}

void write_features(const std::filesystem::path& path, const FeatureMap& fm) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write("LMEL", 4);
  binary::write_u32(os, 1);
  binary::write_u32(os, static_cast<std::uint32_t>(fm.n_frames()));
  binary::write_u32(os, static_cast<std::uint32_t>(fm.n_bins()));
  for (float v : fm.data.values()) binary::write_f32(os, v);
  if (!os) throw IoError("write failed: " + path.string());
}

FeatureMap read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature file " + path.string());
  binary::expect_magic(is, "LMEL", "feature file");
  const std::uint32_t version = binary::read_u32(is, "version");
  if (version != 1) throw ParseError("unsupported feature file version " + std::to_string(version));
  const std::uint32_t t = binary::read_u32(is, "frame count");
  const std::uint32_t d = binary::read_u32(is, "bin count");
  if (t == 0 || d == 0) throw ParseError("feature file " + path.string() + " has an empty shape");
  FeatureMap fm{Tensor<float>({t, d})};
  for (float& v : fm.data.values()) {
    v = binary::read_f32(is, "feature data");
    if (!std::isfinite(v)) throw ParseError("non-finite value in feature file " + path.string());
  }
  return fm;
}

FeatureMap load_feature_source(const std::filesystem::path& path, const DspConfig& cfg) {
  if (path.extension() == ".wav") return log_mel_energy(read_wav(path), cfg);
  return read_features(path);
}

}  // namespace mtlsed::dsp
