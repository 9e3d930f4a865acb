#pragma once

#include <string>
#include <vector>

#include "mahaflow/dsp.hpp"
#include "mahaflow/tensor.hpp"
#include "mahaflow/wav.hpp"

namespace mahaflow {

struct MelConfig {
  int sample_rate = 24000;
  int n_fft = 1024;
  int hop = 240;  // 100 frames/s at 24 kHz, 4 mel frames per 25 Hz token
  int win = 960;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 12000.0;
  double log_floor = 1e-5;

  void validate() const {
    require(sample_rate > 0, Err::bad_argument, "mel: sample_rate must be positive");
    require(dsp::is_pow2(n_fft), Err::bad_argument, "mel: n_fft must be a power of two");
    require(win <= n_fft, Err::bad_argument, "mel: win must not exceed n_fft");
    require(hop > 0 && hop <= win, Err::bad_argument, "mel: hop must be in (0, win]");
    require(n_mels >= 1, Err::bad_argument, "mel: n_mels must be positive");
    require(fmin < fmax && fmax <= sample_rate / 2.0, Err::bad_argument,
            "mel: need fmin < fmax <= sample_rate/2");
    require(log_floor > 0.0, Err::bad_argument, "mel: log_floor must be positive");
  }

  int frame_rate() const { return sample_rate / hop; }
};

struct MelSpectrogram {
  Tensor frames;  // T x n_mels, natural-log amplitudes
  MelConfig config;

  int64_t n_frames() const { return frames.rows; }
};

// ---------------------------------------------------------------------
//  Slaney mel scale: linear below 1 kHz, logarithmic above.
// ---------------------------------------------------------------------

inline double hz_to_mel(double hz) {
  constexpr double kBreak = 1000.0, kLinear = 200.0 / 3.0;
  const double kLogStep = std::log(6.4) / 27.0;
  if (hz < kBreak) return hz / kLinear;
  return kBreak / kLinear + std::log(hz / kBreak) / kLogStep;
}

inline double mel_to_hz(double mel) {
  constexpr double kBreak = 1000.0, kLinear = 200.0 / 3.0;
  const double kLogStep = std::log(6.4) / 27.0;
  const double break_mel = kBreak / kLinear;
  if (mel < break_mel) return mel * kLinear;
  return kBreak * std::exp((mel - break_mel) * kLogStep);
}

// Band edges linear in mel; n_mels + 2 points from fmin to fmax.
inline std::vector<double> mel_band_edges_hz(const MelConfig& cfg) {
  double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> hz(static_cast<size_t>(cfg.n_mels) + 2);
  for (size_t i = 0; i < hz.size(); ++i) {
    double mel = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1);
    hz[i] = mel_to_hz(mel);
  }
  return hz;
}

// Unit-height triangular filters, [n_mels x n_bins].
inline Tensor mel_filterbank(const MelConfig& cfg) {
  const int64_t n_bins = cfg.n_fft / 2 + 1;
  std::vector<double> edges = mel_band_edges_hz(cfg);
  Tensor fb(cfg.n_mels, n_bins);
  for (int64_t m = 0; m < cfg.n_mels; ++m) {
    double left = edges[static_cast<size_t>(m)];
    double center = edges[static_cast<size_t>(m) + 1];
    double right = edges[static_cast<size_t>(m) + 2];
    for (int64_t k = 0; k < n_bins; ++k) {
      double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      double v = 0.0;
      if (f >= left && f <= center && center > left)
        v = (f - left) / (center - left);
      else if (f > center && f <= right && right > center)
        v = (right - f) / (right - center);
      fb.at(m, k) = v;
    }
  }
  return fb;
}

inline MelSpectrogram mel_spectrogram(const Waveform& w, const MelConfig& cfg) {
  cfg.validate();
  require(w.sample_rate == cfg.sample_rate, Err::rate_mismatch,
          "mel: waveform rate differs from config");
  require(!w.samples.empty(), Err::empty_input, "mel: empty signal");

  dsp::StftConfig sc{cfg.n_fft, cfg.hop, cfg.win};
  auto spec = dsp::stft(w.samples, sc);
  Tensor fb = mel_filterbank(cfg);
  const int64_t T = static_cast<int64_t>(spec.size());
  const int64_t n_bins = cfg.n_fft / 2 + 1;
  const double lf = std::log(cfg.log_floor);

  MelSpectrogram m;
  m.config = cfg;
  m.frames = Tensor(T, cfg.n_mels);
  std::vector<double> mag(static_cast<size_t>(n_bins));
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t k = 0; k < n_bins; ++k) mag[static_cast<size_t>(k)] = std::abs(spec[static_cast<size_t>(t)][static_cast<size_t>(k)]);
    for (int64_t b = 0; b < cfg.n_mels; ++b) {
      double acc = 0.0;
      const double* f = fb.ptr(b);
      for (int64_t k = 0; k < n_bins; ++k) acc += f[k] * mag[static_cast<size_t>(k)];
      m.frames.at(t, b) = acc > cfg.log_floor ? std::log(acc) : lf;
    }
  }
  return m;
}

namespace detail {

// Solve (F F^T) X = F for X via Cholesky; returns pinv(F) = F^T (F F^T)^-1
// as [n_bins x n_mels].
inline Tensor filterbank_pinv(const Tensor& fb) {
  const int64_t M = fb.rows, N = fb.cols;
  Tensor gram = matmul_nt(fb, fb);  // M x M
  // small ridge keeps the factorization stable when triangles barely overlap
  for (int64_t i = 0; i < M; ++i) gram.at(i, i) += 1e-10;
  Tensor chol(M, M);
  for (int64_t i = 0; i < M; ++i) {
    for (int64_t j = 0; j <= i; ++j) {
      double s = gram.at(i, j);
      for (int64_t k = 0; k < j; ++k) s -= chol.at(i, k) * chol.at(j, k);
      if (i == j) {
        require(s > 0.0, Err::bad_argument, "filterbank gram not positive definite");
        chol.at(i, j) = std::sqrt(s);
      } else {
        chol.at(i, j) = s / chol.at(j, j);
      }
    }
  }
  // columns of inv(G) via forward/back substitution
  Tensor ginv(M, M);
  std::vector<double> y(static_cast<size_t>(M)), x(static_cast<size_t>(M));
  for (int64_t c = 0; c < M; ++c) {
    for (int64_t i = 0; i < M; ++i) {
      double s = (i == c) ? 1.0 : 0.0;
      for (int64_t k = 0; k < i; ++k) s -= chol.at(i, k) * y[static_cast<size_t>(k)];
      y[static_cast<size_t>(i)] = s / chol.at(i, i);
    }
    for (int64_t i = M - 1; i >= 0; --i) {
      double s = y[static_cast<size_t>(i)];
      for (int64_t k = i + 1; k < M; ++k) s -= chol.at(k, i) * x[static_cast<size_t>(k)];
      x[static_cast<size_t>(i)] = s / chol.at(i, i);
    }
    for (int64_t i = 0; i < M; ++i) ginv.at(i, c) = x[static_cast<size_t>(i)];
  }
  Tensor pinv(N, M);
  matmul_tn_acc(fb.ptr(), ginv.ptr(), pinv.ptr(), N, M, M);
  return pinv;
}

}  // namespace detail

// Griffin-Lim mel inversion: mel -> linear magnitude via the non-negative
// clamped pseudo-inverse of the filterbank, then plain (momentum-free)
// phase recovery from a zero-phase start. `normalize` rescales the peak to
// 0.95 unless the signal is essentially silent (peak < 1e-6).
inline Waveform griffin_lim(const MelSpectrogram& m, int iters, bool normalize = true) {
  require(iters >= 1, Err::bad_argument, "griffin_lim: iters must be >= 1");
  const MelConfig& cfg = m.config;
  cfg.validate();
  require(m.frames.rows >= 1 && m.frames.cols == cfg.n_mels, Err::shape_mismatch,
          "griffin_lim: bad mel shape");

  const int64_t T = m.frames.rows;
  const double lf = std::log(cfg.log_floor);
  Waveform out;
  out.sample_rate = cfg.sample_rate;

  bool all_floor = true;
  for (double x : m.frames.v)
    if (x > lf + 1e-12) { all_floor = false; break; }
  if (all_floor) {
    out.samples.assign(static_cast<size_t>((T - 1) * cfg.hop), 0.0);
    return out;
  }

  // mel (log) -> linear magnitude spectrogram, clamped at zero
  Tensor fb = mel_filterbank(cfg);
  Tensor pinv = detail::filterbank_pinv(fb);  // n_bins x n_mels
  const int64_t n_bins = cfg.n_fft / 2 + 1;
  Tensor mag(T, n_bins);
  {
    Tensor lin(T, cfg.n_mels);
    for (size_t i = 0; i < lin.v.size(); ++i) lin.v[i] = std::exp(m.frames.v[i]);
    // mag = lin * pinv^T
    matmul_nt_acc(lin.ptr(), pinv.ptr(), mag.ptr(), T, cfg.n_mels, n_bins);
    for (double& x : mag.v) x = std::max(x, 0.0);
  }

  dsp::StftConfig sc{cfg.n_fft, cfg.hop, cfg.win};
  std::vector<std::vector<dsp::cplx>> spec(static_cast<size_t>(T));
  for (int64_t t = 0; t < T; ++t) {
    spec[static_cast<size_t>(t)].resize(static_cast<size_t>(n_bins));
    for (int64_t k = 0; k < n_bins; ++k)
      spec[static_cast<size_t>(t)][static_cast<size_t>(k)] = dsp::cplx(mag.at(t, k), 0.0);
  }
  std::vector<double> x;
  for (int it = 0; it < iters; ++it) {
    x = dsp::istft(spec, sc);
    if (x.empty()) break;
    auto est = dsp::stft(x, sc);
    for (int64_t t = 0; t < T && t < static_cast<int64_t>(est.size()); ++t) {
      for (int64_t k = 0; k < n_bins; ++k) {
        dsp::cplx e = est[static_cast<size_t>(t)][static_cast<size_t>(k)];
        double a = std::abs(e);
        dsp::cplx phase = a > 1e-16 ? e / a : dsp::cplx(1.0, 0.0);
        spec[static_cast<size_t>(t)][static_cast<size_t>(k)] = mag.at(t, k) * phase;
      }
    }
  }
  out.samples = dsp::istft(spec, sc);

  if (normalize) {
    double peak = 0.0;
    for (double s : out.samples) peak = std::max(peak, std::abs(s));
    if (peak >= 1e-6) {
      double g = 0.95 / peak;
      for (double& s : out.samples) s *= g;
    }
  }
  return out;
}

}  // namespace mahaflow
