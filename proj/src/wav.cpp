#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "mtlsed/binary_io.hpp"
#include "mtlsed/dsp.hpp"

namespace mtlsed::dsp {

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open WAV file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                         std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "RIFF" ||
      std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE") {
    throw InvalidInput(name + ": not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + 4));
    const std::uint32_t size = binary::decode_u32(&bytes[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw InvalidInput(name + ": truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) throw InvalidInput(name + ": fmt chunk too short");
      format = binary::decode_u16(&bytes[body]);
      channels = binary::decode_u16(&bytes[body + 2]);
      rate = binary::decode_u32(&bytes[body + 4]);
      bits = binary::decode_u16(&bytes[body + 14]);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw InvalidInput(name + ": data chunk precedes fmt chunk");
      if (format != 1 || bits != 16) throw InvalidInput(name + ": only PCM16 is supported");
      if (channels != 1) {
        throw InvalidInput(name + ": " + std::to_string(channels) + " channels; only mono is supported");
      }
      if (rate == 0) throw InvalidInput(name + ": zero sample rate");
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(binary::decode_u16(&bytes[body + 2 * i]));
        w.samples[i] = static_cast<float>(raw) / 32768.0f;
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw InvalidInput(name + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  os.write("RIFF", 4);
  binary::write_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  binary::write_u32(os, 16);
  binary::write_u16(os, 1);
  binary::write_u16(os, 1);
  binary::write_u32(os, w.sample_rate);
  binary::write_u32(os, w.sample_rate * 2);
  binary::write_u16(os, 2);
  binary::write_u16(os, 16);
  os.write("data", 4);
  binary::write_u32(os, data_bytes);
  for (float s : w.samples) {
    const long q = std::clamp(std::lround(static_cast<double>(s) * 32768.0), -32768L, 32767L);
    binary::write_u16(os, static_cast<std::uint16_t>(q));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace mtlsed::dsp
