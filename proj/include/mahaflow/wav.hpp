#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mahaflow/common.hpp"

namespace mahaflow {

struct Waveform {
  std::vector<double> samples;  // [-1, 1]
  int sample_rate = 24000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

namespace detail {

inline uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace detail

// RIFF/WAVE reader, 16-bit PCM only; stereo is downmixed by channel mean.
inline Waveform load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Err::missing_file, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  require(bytes.size() >= 12, Err::malformed_file, "truncated RIFF header: " + path);
  require(std::memcmp(bytes.data(), "RIFF", 4) == 0 && std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          Err::malformed_file, "not a RIFF/WAVE file: " + path);

  size_t pos = 12;
  int channels = 0, sample_rate = 0, bits = 0, fmt_code = 0;
  bool have_fmt = false;
  const unsigned char* data_ptr = nullptr;
  size_t data_len = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    uint32_t chunk_len = detail::read_u32(hdr + 4);
    size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      require(body + 16 <= bytes.size(), Err::malformed_file, "truncated fmt chunk: " + path);
      fmt_code = detail::read_u16(bytes.data() + body);
      channels = detail::read_u16(bytes.data() + body + 2);
      sample_rate = static_cast<int>(detail::read_u32(bytes.data() + body + 4));
      bits = detail::read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      require(body + chunk_len <= bytes.size(), Err::malformed_file, "truncated data chunk: " + path);
      data_ptr = bytes.data() + body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  require(have_fmt && data_ptr != nullptr, Err::malformed_file, "missing fmt/data chunk: " + path);
  require(fmt_code == 1 && bits == 16, Err::unsupported_encoding,
          "only 16-bit PCM supported: " + path);
  require(channels == 1 || channels == 2, Err::unsupported_encoding,
          "only mono/stereo supported: " + path);
  require(sample_rate > 0, Err::malformed_file, "bad sample rate: " + path);

  size_t frame_bytes = static_cast<size_t>(channels) * 2;
  size_t frames = frame_bytes == 0 ? 0 : data_len / frame_bytes;
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(frames);
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* sp = data_ptr + i * frame_bytes + static_cast<size_t>(c) * 2;
      int16_t s = static_cast<int16_t>(sp[0] | (sp[1] << 8));
      acc += static_cast<double>(s) / 32768.0;
    }
    w.samples[i] = acc / static_cast<double>(channels);
  }
  return w;
}

// 16-bit PCM mono writer. Quantization is round(x * 32768) clamped to
// [-32768, 32767] so the reload error never exceeds one step (1/32768).
inline void save_wav(const Waveform& w, const std::string& path) {
  std::string pcm;
  pcm.reserve(w.samples.size() * 2);
  for (double x : w.samples) {
    long q = std::lround(x * 32768.0);
    if (q > 32767) q = 32767;
    if (q < -32768) q = -32768;
    detail::put_u16(pcm, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  std::string out;
  out.reserve(44 + pcm.size());
  out += "RIFF";
  detail::put_u32(out, static_cast<uint32_t>(36 + pcm.size()));
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<uint32_t>(w.sample_rate * 2));
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, static_cast<uint32_t>(pcm.size()));
  out += pcm;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), Err::write_failed, "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  require(f.good(), Err::write_failed, "short write: " + path);
}

// Linear-interpolation resampler; output length = round(len * target/source).
inline Waveform resample(const Waveform& w, int target_rate) {
  require(target_rate > 0, Err::bad_argument, "resample: target rate must be positive");
  if (target_rate == w.sample_rate) return w;
  Waveform out;
  out.sample_rate = target_rate;
  if (w.samples.empty()) return out;
  size_t n_out = static_cast<size_t>(std::llround(static_cast<double>(w.samples.size()) *
                                                  static_cast<double>(target_rate) /
                                                  static_cast<double>(w.sample_rate)));
  out.samples.resize(n_out);
  double step = static_cast<double>(w.sample_rate) / static_cast<double>(target_rate);
  size_t last = w.samples.size() - 1;
  for (size_t i = 0; i < n_out; ++i) {
    double pos = static_cast<double>(i) * step;
    size_t i0 = static_cast<size_t>(pos);
    if (i0 >= last) {
      out.samples[i] = w.samples[last];
      continue;
    }
    double frac = pos - static_cast<double>(i0);
    out.samples[i] = w.samples[i0] * (1.0 - frac) + w.samples[i0 + 1] * frac;
  }
  return out;
}

}  // namespace mahaflow
