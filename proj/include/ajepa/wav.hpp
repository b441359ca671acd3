#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "ajepa/error.hpp"

namespace ajepa {

inline constexpr int kSampleRateHz = 16000;

struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = kSampleRateHz;
};

namespace detail {

inline std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) |
         static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 |
         static_cast<std::uint32_t>(b[at + 3]) << 24;
}

inline std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}

inline bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::equal(tag, tag + 4, b.begin() + static_cast<std::ptrdiff_t>(at));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace detail

/// Linear-interpolation resampling. Sample i of the output sits at input time
/// i * from_hz / to_hz; the output ends at the last input sample.
inline std::vector<double> resample_linear(std::span<const double> in, int from_hz,
                                           int to_hz) {
  if (from_hz <= 0 || to_hz <= 0) throw ConfigError("sample rates must be positive");
  if (in.empty() || from_hz == to_hz) return {in.begin(), in.end()};
  const auto n = static_cast<std::int64_t>(in.size());
  const std::int64_t out_len = (n - 1) * to_hz / from_hz + 1;
  std::vector<double> out(static_cast<std::size_t>(out_len));
  for (std::int64_t i = 0; i < out_len; ++i) {
    const std::int64_t num = i * from_hz;
    const std::int64_t left = num / to_hz;
    const double frac = static_cast<double>(num % to_hz) / to_hz;
    const double a = in[static_cast<std::size_t>(left)];
    const double b = left + 1 < n ? in[static_cast<std::size_t>(left + 1)] : a;
    out[static_cast<std::size_t>(i)] = a + (b - a) * frac;
  }
  return out;
}

/// Decodes a RIFF/WAVE PCM16 stream (mono or stereo). Stereo is averaged to
/// mono and the result is brought to 16 kHz.
inline Waveform decode_wav(std::span<const std::uint8_t> bytes) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || !detail::tag_is(bytes, 0, "RIFF") ||
      !detail::tag_is(bytes, 8, "WAVE")) {
    throw DecodeError("not a RIFF/WAVE stream");
  }
  bool have_fmt = false;
  int channels = 0;
  int rate = 0;
  std::span<const std::uint8_t> data;
  bool have_data = false;
  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const std::uint32_t chunk_size = read_u32(bytes, at + 4);
    const std::size_t body = at + 8;
    if (chunk_size > bytes.size() - body) {
      throw DecodeError("chunk extends past end of stream");
    }
    if (detail::tag_is(bytes, at, "fmt ")) {
      if (chunk_size < 16) throw DecodeError("fmt chunk too short");
      std::uint16_t format = read_u16(bytes, body);
      channels = read_u16(bytes, body + 2);
      rate = static_cast<int>(read_u32(bytes, body + 4));
      const std::uint16_t bits = read_u16(bytes, body + 14);
      if (format == 0xFFFE && chunk_size >= 26) {
        format = read_u16(bytes, body + 24);  // extensible: sub-format GUID head
      }
      if (format != 1) {
        throw UnsupportedFormatError("unsupported WAVE codec " + std::to_string(format));
      }
      if (bits != 16) {
        throw UnsupportedFormatError("unsupported bit depth " + std::to_string(bits));
      }
      if (channels != 1 && channels != 2) {
        throw UnsupportedFormatError("unsupported channel count " +
                                     std::to_string(channels));
      }
      if (rate <= 0) throw DecodeError("sample rate must be positive");
      have_fmt = true;
    } else if (detail::tag_is(bytes, at, "data")) {
      data = bytes.subspan(body, chunk_size);
      have_data = true;
    }
    at = body + chunk_size + (chunk_size & 1u);
  }
  if (!have_fmt) throw DecodeError("missing fmt chunk");
  if (!have_data) throw DecodeError("missing data chunk");

  const std::size_t frame_bytes = 2 * static_cast<std::size_t>(channels);
  const std::size_t frames = data.size() / frame_bytes;
  std::vector<double> mono(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const auto v = static_cast<std::int16_t>(read_u16(data, i * frame_bytes + 2 * c));
      acc += v / 32768.0;
    }
    mono[i] = acc / channels;
  }
  Waveform w;
  w.samples = resample_linear(mono, rate, kSampleRateHz);
  w.sample_rate_hz = kSampleRateHz;
  return w;
}

/// Encodes as mono PCM16 at the waveform's own rate. Samples are clamped to
/// the int16 range.
inline std::vector<std::uint8_t> encode_wav(const Waveform& w) {
  std::vector<std::uint8_t> out;
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  detail::put_tag(out, "RIFF");
  detail::put_u32(out, 36 + 2 * n);
  detail::put_tag(out, "WAVE");
  detail::put_tag(out, "fmt ");
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  detail::put_tag(out, "data");
  detail::put_u32(out, 2 * n);
  for (double x : w.samples) {
    const double scaled = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
    detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path,
                             std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Waveform read_wav_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_wav(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  } catch (const UnsupportedFormatError& e) {
    throw UnsupportedFormatError(path.string() + ": " + e.what());
  }
}

inline void write_wav_file(const std::filesystem::path& path, const Waveform& w) {
  write_file_bytes(path, encode_wav(w));
}

}  // namespace ajepa
