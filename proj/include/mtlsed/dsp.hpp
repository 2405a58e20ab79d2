#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mtlsed/tensor.hpp"

/// Log-mel frontend: framing, STFT, HTK mel filterbank and the on-disk
/// formats for waveforms and feature maps.
namespace mtlsed::dsp {

struct Waveform {
  std::vector<float> samples;
  std::uint32_t sample_rate = 16000;
};

struct DspConfig {
  double frame_len_ms = 40.0;
  double hop_ms = 20.0;
  std::size_t n_mels = 64;
  std::uint32_t sample_rate = 16000;
  /// 0 selects the next power of two at or above the frame length.
  std::size_t fft_size = 0;
  double log_floor = 1e-10;

  std::size_t frame_length() const;
  std::size_t hop_length() const;
  std::size_t resolved_fft_size() const;
  std::size_t n_bins() const { return resolved_fft_size() / 2 + 1; }

  /// Throws InvalidConfig when the combination cannot produce a filterbank.
  void validate() const;

  bool operator==(const DspConfig&) const = default;
};

/// T x D log-mel energies, one row per frame.
struct FeatureMap {
  Tensor<float> data;

  std::size_t n_frames() const { return data.dim(0); }
  std::size_t n_bins() const { return data.dim(1); }
  bool operator==(const FeatureMap&) const = default;
};

struct Spectrogram {
  std::size_t n_frames = 0;
  std::size_t n_bins = 0;
  std::vector<std::complex<double>> values;  // row-major, frame-major

  const std::complex<double>& at(std::size_t t, std::size_t k) const {
    return values[t * n_bins + k];
  }
};

/// Number of frames produced for a signal of `n_samples`: ceil(L / hop).
std::size_t frame_count(std::size_t n_samples, const DspConfig& cfg);

/// Hann-windowed STFT over frames centred at multiples of the hop. The signal
/// is reflection-padded by frame_len/2 on both sides.
Spectrogram stft(const Waveform& w, const DspConfig& cfg);

/// n_mels x (fft_size/2+1) triangular filters on the HTK mel scale covering
/// 0 Hz to Nyquist.
Tensor<double> mel_filterbank(const DspConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// log(max(mel . |X|^2, log_floor)) per frame.
FeatureMap log_mel_energy(const Waveform& w, const DspConfig& cfg);

// PCM16 mono little-endian WAV. Anything else is rejected with InvalidInput.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);

// "LMEL" feature file: magic, u32 version=1, u32 T, u32 D, T*D f32 row-major.
void write_features(const std::filesystem::path& path, const FeatureMap& fm);
FeatureMap read_features(const std::filesystem::path& path);

/// Loads a feature map from either a feature file or a WAV (extracting on the
/// fly with `cfg`), chosen by extension.
FeatureMap load_feature_source(const std::filesystem::path& path, const DspConfig& cfg);

}  // namespace mtlsed::dsp
