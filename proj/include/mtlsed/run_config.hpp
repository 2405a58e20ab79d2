#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mtlsed/dsp.hpp"
#include "mtlsed/model.hpp"
#include "mtlsed/train.hpp"

namespace mtlsed {

/// Everything a run needs, read from `key = value` lines. The architecture's
/// mel count follows dsp.n_mels and its class counts follow the data
/// vocabulary.
struct RunConfig {
  dsp::DspConfig dsp;
  model::ArchConfig arch;
  train::TrainConfig train;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

std::vector<std::string> run_config_keys();

/// Throws InvalidConfig for unknown keys or unparsable values.
void set_run_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_run_config_value(const RunConfig& cfg, const std::string& key);

/// Starts from `base` and applies each line in order.
RunConfig parse_run_config(std::istream& is, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Every key with its resolved value; parsing the result gives back `cfg`.
std::string format_run_config(const RunConfig& cfg);
void write_run_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace mtlsed
