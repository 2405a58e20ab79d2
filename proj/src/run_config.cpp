#include "mtlsed/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace mtlsed {

namespace {

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& value, const char* expected) {
  throw InvalidConfig("'" + value + "' is not " + expected);
}

double to_double(const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(v, "a number");
  return out;
}

std::uint64_t to_uint(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(v, "a non-negative integer");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(v, "a boolean");
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename Get>
Field real(const char* key, Get get) {
  return {key, [get](RunConfig& c, const std::string& v) { get(c) = to_double(v); },
          [get](RunConfig c) { return fmt(get(c)); }};
}

template <typename Get>
Field uint(const char* key, Get get) {
  return {key,
          [get](RunConfig& c, const std::string& v) {
            get(c) = static_cast<std::remove_reference_t<decltype(get(c))>>(to_uint(v));
          },
          [get](RunConfig c) { return fmt(static_cast<std::uint64_t>(get(c))); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      real("dsp.frame_len_ms", [](RunConfig& c) -> double& { return c.dsp.frame_len_ms; }),
      real("dsp.hop_ms", [](RunConfig& c) -> double& { return c.dsp.hop_ms; }),
      uint("dsp.n_mels", [](RunConfig& c) -> std::size_t& { return c.dsp.n_mels; }),
      uint("dsp.sample_rate", [](RunConfig& c) -> std::uint32_t& { return c.dsp.sample_rate; }),
      uint("dsp.fft_size", [](RunConfig& c) -> std::size_t& { return c.dsp.fft_size; }),
      real("dsp.log_floor", [](RunConfig& c) -> double& { return c.dsp.log_floor; }),
      uint("arch.n_frames", [](RunConfig& c) -> std::size_t& { return c.arch.n_frames; }),
      uint("arch.shared_channels", [](RunConfig& c) -> std::size_t& { return c.arch.shared_channels; }),
      uint("arch.scene_channels", [](RunConfig& c) -> std::size_t& { return c.arch.scene_channels; }),
      uint("arch.gru_hidden", [](RunConfig& c) -> std::size_t& { return c.arch.gru_hidden; }),
      uint("arch.fc_hidden", [](RunConfig& c) -> std::size_t& { return c.arch.fc_hidden; }),
      real("arch.scale_factor", [](RunConfig& c) -> double& { return c.arch.scale_factor; }),
      {"arch.shared_freq_pools",
       [](RunConfig& c, const std::string& v) {
         std::stringstream ss(v);
         std::string part;
         std::vector<std::size_t> pools;
         while (std::getline(ss, part, ',')) pools.push_back(to_uint(trim(part)));
         if (pools.size() != 3) bad_value(v, "three comma-separated pool sizes");
         std::copy(pools.begin(), pools.end(), c.arch.shared_freq_pools.begin());
       },
       [](const RunConfig& c) {
         const auto& p = c.arch.shared_freq_pools;
         return fmt(std::uint64_t{p[0]}) + "," + fmt(std::uint64_t{p[1]}) + "," + fmt(std::uint64_t{p[2]});
       }},
      uint("arch.scene_time_pool", [](RunConfig& c) -> std::size_t& { return c.arch.scene_time_pool; }),
      {"train.mode", [](RunConfig& c, const std::string& v) { c.train.mode = train::parse_mode(v); },
       [](const RunConfig& c) { return std::string(train::to_string(c.train.mode)); }},
      {"train.pooling",
       [](RunConfig& c, const std::string& v) {
         c.train.pooling = v == "none" ? std::nullopt : std::optional(milpool::parse_pooling(v));
       },
       [](const RunConfig& c) {
         return c.train.pooling ? std::string(milpool::to_string(*c.train.pooling)) : std::string("none");
       }},
      real("train.lr", [](RunConfig& c) -> double& { return c.train.optimizer.lr; }),
      real("train.beta1", [](RunConfig& c) -> double& { return c.train.optimizer.beta1; }),
      real("train.beta2", [](RunConfig& c) -> double& { return c.train.optimizer.beta2; }),
      real("train.eps", [](RunConfig& c) -> double& { return c.train.optimizer.eps; }),
      {"train.rectified", [](RunConfig& c, const std::string& v) { c.train.optimizer.rectified = to_bool(v); },
       [](const RunConfig& c) { return fmt(c.train.optimizer.rectified); }},
      uint("train.epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; }),
      uint("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }),
      uint("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }),
      real("train.clip_norm", [](RunConfig& c) -> double& { return c.train.clip_norm; }),
      real("train.eval_fraction", [](RunConfig& c) -> double& { return c.train.eval_fraction; }),
      real("train.threshold", [](RunConfig& c) -> double& { return c.train.threshold; }),
      real("loss.alpha", [](RunConfig& c) -> double& { return c.train.weights.alpha; }),
      real("loss.beta", [](RunConfig& c) -> double& { return c.train.weights.beta; }),
      real("loss.gamma", [](RunConfig& c) -> double& { return c.train.weights.gamma; }),
      real("loss.zeta", [](RunConfig& c) -> double& { return c.train.weights.zeta; }),
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const Field& f : fields()) {
    if (key == f.key) return f;
  }
  throw InvalidConfig("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  dsp.validate();
  if (arch.n_mels != dsp.n_mels) throw InvalidConfig("arch n_mels differs from dsp.n_mels");
  arch.validate();
  train.validate();
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.emplace_back(f.key);
  return keys;
}

void set_run_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field& f = field(key);
  try {
    f.set(cfg, value);
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(key + ": " + e.what());
  }
  cfg.arch.n_mels = cfg.dsp.n_mels;
}

std::string get_run_config_value(const RunConfig& cfg, const std::string& key) { return field(key).get(cfg); }

RunConfig parse_run_config(std::istream& is, RunConfig base) {
  base.arch.n_mels = base.dsp.n_mels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidConfig("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set_run_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const InvalidConfig& e) {
      throw InvalidConfig("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  return parse_run_config(is, std::move(base));
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

void write_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << format_run_config(cfg);
}

}  // namespace mtlsed
