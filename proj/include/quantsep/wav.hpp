// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// RIFF/WAVE reading and writing: 16-bit PCM and 32-bit IEEE float,
// any channel count, interleaved little-endian samples.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "quantsep/common.hpp"

namespace quantsep::wav {

enum class SampleFormat { Pcm16, Float32 };

struct Audio {
  int sample_rate = 16000;
  // channels[c][i]
  std::vector<std::vector<float>> channels;

  std::size_t frames() const { return channels.empty() ? 0 : channels[0].size(); }
};

inline std::string encode(const Audio& audio, SampleFormat format = SampleFormat::Float32) {
  const std::uint16_t n_ch = static_cast<std::uint16_t>(audio.channels.size());
  if (n_ch == 0) throw ShapeError("wav: no channels to write");
  const std::size_t n = audio.frames();
  for (const auto& ch : audio.channels)
    if (ch.size() != n) throw ShapeError("wav: channels differ in length");
  const std::uint16_t bits = format == SampleFormat::Pcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(n_ch * bits / 8);
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(n * block);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_le<std::uint32_t>(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, format == SampleFormat::Pcm16 ? 1 : 3);
  put_le<std::uint16_t>(out, n_ch);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(audio.sample_rate) * block);
  put_le<std::uint16_t>(out, block);
  put_le<std::uint16_t>(out, bits);
  out += "data";
  put_le<std::uint32_t>(out, data_bytes);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& ch : audio.channels) {
      if (format == SampleFormat::Float32) {
        put_le<float>(out, ch[i]);
      } else {
        const float clipped = std::fmax(-1.0f, std::fmin(1.0f, ch[i]));
        put_le<std::int16_t>(out, static_cast<std::int16_t>(std::lrint(clipped * 32767.0f)));
      }
    }
  }
  return out;
}

inline Audio decode(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "RIFF" || bytes.substr(8, 4) != "WAVE")
    throw ConfigError("wav: not a RIFF/WAVE file");
  std::size_t pos = 12;
  std::uint16_t format_tag = 0, n_ch = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    const std::string_view id = bytes.substr(pos, 4);
    const std::uint32_t size = get_le<std::uint32_t>(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw ConfigError("wav: truncated chunk");
    if (id == "fmt ") {
      format_tag = get_le<std::uint16_t>(bytes, body);
      n_ch = get_le<std::uint16_t>(bytes, body + 2);
      rate = get_le<std::uint32_t>(bytes, body + 4);
      bits = get_le<std::uint16_t>(bytes, body + 14);
      if (format_tag == 0xFFFE && size >= 26) format_tag = get_le<std::uint16_t>(bytes, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw ConfigError("wav: data chunk before fmt chunk");
      const bool pcm16 = format_tag == 1 && bits == 16;
      const bool f32 = format_tag == 3 && bits == 32;
      if (!pcm16 && !f32) throw ConfigError(cat("wav: unsupported format tag ", format_tag, " with ", bits, " bits"));
      if (n_ch == 0) throw ConfigError("wav: zero channels");
      const std::size_t width = bits / 8;
      const std::size_t n = size / (width * n_ch);
      Audio audio;
      audio.sample_rate = static_cast<int>(rate);
      audio.channels.assign(n_ch, std::vector<float>(n));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < n_ch; ++c) {
          const std::size_t at = body + (i * n_ch + c) * width;
          audio.channels[c][i] =
              f32 ? get_le<float>(bytes, at) : static_cast<float>(get_le<std::int16_t>(bytes, at)) / 32767.0f;
        }
      }
      return audio;
    }
    pos = body + size + (size & 1);
  }
  throw ConfigError("wav: no data chunk");
}

inline void write(const std::string& path, const Audio& audio, SampleFormat format = SampleFormat::Float32) {
  write_file(path, encode(audio, format));
}

// Reads a file and checks its rate against the expected configuration.
inline Audio read(const std::string& path, int expected_rate = 0) {
  Audio audio = decode(read_file(path));
  if (expected_rate > 0 && audio.sample_rate != expected_rate)
    throw ConfigError(cat("wav: '", path, "' has sample rate ", audio.sample_rate, ", expected ", expected_rate));
  return audio;
}

}  // namespace quantsep::wav
