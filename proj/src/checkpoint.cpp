#include "mtlsed/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "mtlsed/binary_io.hpp"

namespace mtlsed::model {

namespace {

using nlohmann::json;

json arch_to_json(const ArchConfig& a) {
  return {{"n_mels", a.n_mels},
          {"n_frames", a.n_frames},
          {"shared_channels", a.shared_channels},
          {"scene_channels", a.scene_channels},
          {"gru_hidden", a.gru_hidden},
          {"fc_hidden", a.fc_hidden},
          {"n_scenes", a.n_scenes},
          {"n_events", a.n_events},
          {"scale_factor", a.scale_factor},
          {"shared_freq_pools", a.shared_freq_pools},
          {"scene_time_pool", a.scene_time_pool}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.n_mels = j.at("n_mels").get<std::size_t>();
  a.n_frames = j.at("n_frames").get<std::size_t>();
  a.shared_channels = j.at("shared_channels").get<std::size_t>();
  a.scene_channels = j.at("scene_channels").get<std::size_t>();
  a.gru_hidden = j.at("gru_hidden").get<std::size_t>();
  a.fc_hidden = j.at("fc_hidden").get<std::size_t>();
  a.n_scenes = j.at("n_scenes").get<std::size_t>();
  a.n_events = j.at("n_events").get<std::size_t>();
  a.scale_factor = j.at("scale_factor").get<double>();
  a.shared_freq_pools = j.at("shared_freq_pools").get<std::array<std::size_t, 3>>();
  a.scene_time_pool = j.at("scene_time_pool").get<std::size_t>();
  return a;
}

json dsp_to_json(const dsp::DspConfig& d) {
  return {{"frame_len_ms", d.frame_len_ms}, {"hop_ms", d.hop_ms},     {"n_mels", d.n_mels},
          {"sample_rate", d.sample_rate},   {"fft_size", d.fft_size}, {"log_floor", d.log_floor}};
}

dsp::DspConfig dsp_from_json(const json& j) {
  dsp::DspConfig d;
  d.frame_len_ms = j.at("frame_len_ms").get<double>();
  d.hop_ms = j.at("hop_ms").get<double>();
  d.n_mels = j.at("n_mels").get<std::size_t>();
  d.sample_rate = j.at("sample_rate").get<std::uint32_t>();
  d.fft_size = j.at("fft_size").get<std::size_t>();
  d.log_floor = j.at("log_floor").get<double>();
  return d;
}

}  // namespace

std::string checkpoint_header(const Checkpoint& ckpt) {
  json tensors = json::array();
  for (const auto& e : ckpt.params.entries()) {
    tensors.push_back({{"name", e.name}, {"shape", e.value.shape()}, {"trainable", e.trainable}});
  }
  json header = {{"arch", arch_to_json(ckpt.arch)},
                 {"pooling", ckpt.pooling ? json(std::string(milpool::to_string(*ckpt.pooling))) : json(nullptr)},
                 {"dsp", dsp_to_json(ckpt.dsp)},
                 {"tensors", tensors}};
  return header.dump();
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  check_params(ckpt.arch, ckpt.pooling, ckpt.params);
  const std::string header = checkpoint_header(ckpt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write("MTLW", 4);
  binary::write_u32(os, 1);
  binary::write_u32(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& e : ckpt.params.entries()) {
    for (float v : e.value.values()) binary::write_f32(os, v);
  }
  if (!os) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  binary::expect_magic(is, "MTLW", "checkpoint");
  const std::uint32_t version = binary::read_u32(is, "checkpoint version");
  if (version != 1) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t header_len = binary::read_u32(is, "checkpoint header length");
  std::string text(header_len, '\0');
  if (!is.read(text.data(), header_len)) throw ParseError("truncated checkpoint header");

  Checkpoint ckpt;
  try {
    const json header = json::parse(text);
    ckpt.arch = arch_from_json(header.at("arch"));
    if (!header.at("pooling").is_null()) {
      ckpt.pooling = milpool::parse_pooling(header.at("pooling").get<std::string>());
    }
    ckpt.dsp = dsp_from_json(header.at("dsp"));
    for (const json& t : header.at("tensors")) {
      Tensor<float> value(t.at("shape").get<Shape>());
      for (float& v : value.values()) v = binary::read_f32(is, "checkpoint tensor data");
      ckpt.params.add(t.at("name").get<std::string>(), std::move(value), t.at("trainable").get<bool>());
    }
  } catch (const json::exception& e) {
    throw ParseError("checkpoint header: " + std::string(e.what()));
  }
  check_params(ckpt.arch, ckpt.pooling, ckpt.params);
  return ckpt;
}

}  // namespace mtlsed::model
