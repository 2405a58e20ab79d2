#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "mtlsed/dsp.hpp"
#include "mtlsed/model.hpp"

namespace mtlsed::model {

struct Checkpoint {
  ArchConfig arch;
  std::optional<PoolingKind> pooling;
  dsp::DspConfig dsp;
  ModelParams<float> params;

  bool operator==(const Checkpoint&) const = default;
};

/// "MTLW", u32 version=1, u32 header_len, UTF-8 JSON header (architecture,
/// pooling, frontend config, ordered name/shape list), then every array as
/// little-endian f32 in header order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The JSON header alone, for inspection and tests.
std::string checkpoint_header(const Checkpoint& ckpt);

}  // namespace mtlsed::model
