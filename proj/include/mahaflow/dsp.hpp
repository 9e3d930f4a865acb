#pragma once

#include <complex>
#include <vector>

#include "mahaflow/common.hpp"
#include "mahaflow/tensor.hpp"

namespace mahaflow::dsp {

using cplx = std::complex<double>;

inline bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT (inverse divides by n).
inline void fft(std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  require(is_pow2(static_cast<int64_t>(n)), Err::bad_argument, "fft size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    cplx wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        cplx u = a[i + k];
        cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= static_cast<double>(n);
}

// Periodic Hann window.
inline std::vector<double> hann(int64_t n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n)));
  return w;
}

// Reflective index without repeating the edge sample, bouncing for very
// short signals.
inline int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  int64_t period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

struct StftConfig {
  int64_t n_fft = 1024;
  int64_t hop = 240;
  int64_t win = 960;
};

// Center-padded STFT. Frame count is floor(N/hop) + 1; the window is
// zero-embedded in the middle of the n_fft frame.
inline std::vector<std::vector<cplx>> stft(const std::vector<double>& x, const StftConfig& cfg) {
  require(is_pow2(cfg.n_fft), Err::bad_argument, "n_fft must be a power of two");
  require(!x.empty(), Err::empty_input, "stft: empty signal");
  const int64_t n = static_cast<int64_t>(x.size());
  const int64_t pad = cfg.n_fft / 2;
  const int64_t frames = n / cfg.hop + 1;
  const int64_t off = (cfg.n_fft - cfg.win) / 2;
  std::vector<double> w = hann(cfg.win);

  std::vector<std::vector<cplx>> out(static_cast<size_t>(frames));
  std::vector<cplx> buf(static_cast<size_t>(cfg.n_fft));
  for (int64_t m = 0; m < frames; ++m) {
    std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
    for (int64_t i = 0; i < cfg.win; ++i) {
      int64_t src = m * cfg.hop + off + i - pad;
      double s = x[static_cast<size_t>(reflect_index(src, n))];
      buf[static_cast<size_t>(off + i)] = s * w[static_cast<size_t>(i)];
    }
    fft(buf, false);
    out[static_cast<size_t>(m)].assign(buf.begin(), buf.begin() + cfg.n_fft / 2 + 1);
  }
  return out;
}

// Weighted overlap-add inverse with the same centered window; returns
// (frames-1)*hop samples with the center padding removed.
inline std::vector<double> istft(const std::vector<std::vector<cplx>>& spec, const StftConfig& cfg) {
  require(!spec.empty(), Err::empty_input, "istft: no frames");
  const int64_t frames = static_cast<int64_t>(spec.size());
  const int64_t n_bins = cfg.n_fft / 2 + 1;
  const int64_t pad = cfg.n_fft / 2;
  const int64_t off = (cfg.n_fft - cfg.win) / 2;
  const int64_t padded_len = (frames - 1) * cfg.hop + cfg.n_fft;
  std::vector<double> w = hann(cfg.win);

  std::vector<double> acc(static_cast<size_t>(padded_len), 0.0);
  std::vector<double> wsum(static_cast<size_t>(padded_len), 0.0);
  std::vector<cplx> buf(static_cast<size_t>(cfg.n_fft));
  for (int64_t m = 0; m < frames; ++m) {
    require(static_cast<int64_t>(spec[static_cast<size_t>(m)].size()) == n_bins, Err::shape_mismatch,
            "istft: bin count mismatch");
    for (int64_t k = 0; k < n_bins; ++k) buf[static_cast<size_t>(k)] = spec[static_cast<size_t>(m)][static_cast<size_t>(k)];
    for (int64_t k = n_bins; k < cfg.n_fft; ++k)
      buf[static_cast<size_t>(k)] = std::conj(buf[static_cast<size_t>(cfg.n_fft - k)]);
    fft(buf, true);
    for (int64_t i = 0; i < cfg.win; ++i) {
      int64_t dst = m * cfg.hop + off + i;
      double wi = w[static_cast<size_t>(i)];
      acc[static_cast<size_t>(dst)] += wi * buf[static_cast<size_t>(off + i)].real();
      wsum[static_cast<size_t>(dst)] += wi * wi;
    }
  }
  int64_t out_len = (frames - 1) * cfg.hop;
  std::vector<double> out(static_cast<size_t>(out_len), 0.0);
  for (int64_t i = 0; i < out_len; ++i) {
    double d = wsum[static_cast<size_t>(i + pad)];
    if (d > 1e-11) out[static_cast<size_t>(i)] = acc[static_cast<size_t>(i + pad)] / d;
  }
  return out;
}

}  // namespace mahaflow::dsp
