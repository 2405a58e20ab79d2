#pragma once

// Tiny end-to-end fixtures: 0.16 s clips give 8 frames, 8 mels match the tiny
// network, and the class counts follow the default vocabulary.

#include <cstdint>

#include "mtlsed/data.hpp"
#include "mtlsed/dsp.hpp"
#include "mtlsed/model.hpp"
#include "mtlsed/run_config.hpp"

namespace testing {

inline mtlsed::dsp::DspConfig tiny_dsp() {
  mtlsed::dsp::DspConfig d;
  d.n_mels = 8;
  return d;
}

inline mtlsed::data::SynthConfig tiny_synth(std::size_t n_clips, std::uint64_t seed) {
  mtlsed::data::SynthConfig s;
  s.n_clips = n_clips;
  s.seed = seed;
  s.clip_seconds = 0.16;
  return s;
}

inline mtlsed::model::ArchConfig tiny_arch() {
  auto a = mtlsed::model::ArchConfig::tiny();
  a.n_scenes = 4;
  a.n_events = 25;
  return a;
}

inline mtlsed::data::Dataset tiny_dataset(std::size_t n_clips, std::uint64_t seed) {
  return mtlsed::data::synth_dataset(tiny_synth(n_clips, seed), tiny_dsp());
}

inline mtlsed::RunConfig tiny_run_config() {
  mtlsed::RunConfig r;
  r.dsp = tiny_dsp();
  r.arch = tiny_arch();
  r.train.epochs = 2;
  r.train.batch_size = 4;
  return r;
}

}  // namespace testing
