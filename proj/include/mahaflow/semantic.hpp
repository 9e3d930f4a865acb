#pragma once

#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "mahaflow/common.hpp"
#include "mahaflow/mel.hpp"
#include "mahaflow/tensor.hpp"
#include "mahaflow/wav.hpp"

namespace mahaflow {

// =====================================================================
//  Frame embeddings
// =====================================================================

struct FrameEmbeddingSeq {
  Tensor frames;       // T x D
  int frame_rate = 25;  // must divide the mel frame rate
};

class FrameEmbeddingProvider {
 public:
  virtual ~FrameEmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual int frame_rate() const = 0;
  // source_path is the on-disk identity of the audio, used by providers
  // that key off precomputed files; may be empty for pure-signal providers.
  virtual FrameEmbeddingSeq extract(const Waveform& w, const std::string& source_path) const = 0;
};

// Default provider: 13 MFCCs + log-energy per 40 ms hop (25 Hz), D = 14.
class MfccProvider : public FrameEmbeddingProvider {
 public:
  static constexpr int kNumCepstra = 13;
  static constexpr int kDim = kNumCepstra + 1;

  std::string id() const override { return "mfcc13e"; }
  int frame_rate() const override { return 25; }

  FrameEmbeddingSeq extract(const Waveform& w, const std::string&) const override {
    const int64_t hop = w.sample_rate / frame_rate();  // 960 samples at 24 kHz
    require(hop * frame_rate() == w.sample_rate, Err::provider_failure,
            "mfcc: sample rate not divisible by frame rate");
    const int64_t n_frames = static_cast<int64_t>(w.samples.size()) / hop;
    const int64_t n_fft = 1024;
    const int64_t n_bins = n_fft / 2 + 1;
    const int n_filters = 26;

    MelConfig mc;
    mc.sample_rate = w.sample_rate;
    mc.n_fft = static_cast<int>(n_fft);
    mc.n_mels = n_filters;
    mc.fmin = 0.0;
    mc.fmax = w.sample_rate / 2.0;
    Tensor fb = mel_filterbank(mc);

    std::vector<double> window = dsp::hann(hop);
    FrameEmbeddingSeq out;
    out.frame_rate = frame_rate();
    out.frames = Tensor(n_frames, kDim);

    std::vector<dsp::cplx> buf(static_cast<size_t>(n_fft));
    std::vector<double> logmel(static_cast<size_t>(n_filters));
    for (int64_t t = 0; t < n_frames; ++t) {
      const double* x = w.samples.data() + t * hop;
      double energy = 0.0;
      std::fill(buf.begin(), buf.end(), dsp::cplx(0.0, 0.0));
      for (int64_t i = 0; i < hop; ++i) {
        energy += x[i] * x[i];
        buf[static_cast<size_t>(i)] = x[i] * window[static_cast<size_t>(i)];
      }
      energy /= static_cast<double>(hop);
      dsp::fft(buf, false);
      for (int f = 0; f < n_filters; ++f) {
        double acc = 0.0;
        const double* row = fb.ptr(f);
        for (int64_t k = 0; k < n_bins; ++k) acc += row[k] * std::abs(buf[static_cast<size_t>(k)]);
        logmel[static_cast<size_t>(f)] = std::log(std::max(acc, 1e-10));
      }
      // DCT-II, coefficients 1..13 (energy replaces c0)
      for (int c = 1; c <= kNumCepstra; ++c) {
        double acc = 0.0;
        for (int f = 0; f < n_filters; ++f)
          acc += logmel[static_cast<size_t>(f)] *
                 std::cos(M_PI * c * (f + 0.5) / static_cast<double>(n_filters));
        out.frames.at(t, c - 1) = acc;
      }
      out.frames.at(t, kNumCepstra) = std::log(std::max(energy, 1e-10));
    }
    return out;
  }
};

// Reads precomputed embeddings from "<audio path>.mhem".
class SidecarProvider : public FrameEmbeddingProvider {
 public:
  explicit SidecarProvider(std::string provider_id = "sidecar", int rate = 25)
      : id_(std::move(provider_id)), rate_(rate) {}

  std::string id() const override { return id_; }
  int frame_rate() const override { return rate_; }
  FrameEmbeddingSeq extract(const Waveform&, const std::string& source_path) const override;

 private:
  std::string id_;
  int rate_;
};

inline FrameEmbeddingSeq extract_frame_embeddings(const Waveform& w,
                                                  const FrameEmbeddingProvider& provider,
                                                  const std::string& source_path = "") {
  require(w.sample_rate == 24000, Err::rate_mismatch, "embeddings: expected 24 kHz input");
  FrameEmbeddingSeq e = provider.extract(w, source_path);
  require(e.frames.finite(), Err::provider_failure, "embeddings: non-finite features");
  require(e.frame_rate > 0 && 100 % e.frame_rate == 0, Err::provider_failure,
          "embeddings: frame rate must divide 100");
  return e;
}

// =====================================================================
//  Codebook (k-means over pooled frame embeddings)
// =====================================================================

struct Codebook {
  int64_t k = 0;
  int64_t d = 0;
  std::vector<float> centroids;  // K x D row-major; f32 so file IO is exact
  std::string provider_id;
  int frame_rate = 25;

  int64_t sem_stop() const { return k; }            // terminal token id
  int64_t sem_vocab_size() const { return k + 1; }  // includes SEM_STOP

  const float* row(int64_t i) const { return centroids.data() + i * d; }
};

struct SemanticTokenSeq {
  std::vector<int64_t> ids;  // values in [0, K]; K == SEM_STOP, terminal only
  int64_t stop_id = 0;

  // ids with a terminal stop removed
  std::vector<int64_t> content_ids() const {
    std::vector<int64_t> out = ids;
    if (!out.empty() && out.back() == stop_id) out.pop_back();
    return out;
  }
};

struct KmeansTrace {
  std::vector<double> inertia_per_iter;
  int64_t iterations = 0;
  int64_t reseeds = 0;  // empty-cluster rescues; breaks strict monotonicity
  bool converged = false;
  bool nearest_ok = false;          // every point assigned to its nearest centroid
  double fixed_point_max_err = 0.0;  // max |centroid - mean of assigned points|
};

// k-means++ seeding followed by Lloyd iterations until assignments are
// stable or `iters` is hit. Empty clusters are re-seeded to the point
// farthest from its assigned centroid. Deterministic for a fixed seed.
inline Codebook fit_codebook(const Tensor& points, int64_t k, int64_t iters, uint64_t seed,
                             const std::string& provider_id = "mfcc13e", int frame_rate = 25,
                             KmeansTrace* trace = nullptr) {
  const int64_t n = points.rows, d = points.cols;
  require(k >= 2, Err::bad_argument, "fit_codebook: need k >= 2");
  require(n >= k, Err::too_few_points, "fit_codebook: fewer points than clusters");
  require(points.finite(), Err::non_finite, "fit_codebook: non-finite input");

  Rng rng(seed);
  std::vector<double> cent(static_cast<size_t>(k * d));
  std::vector<double> best_d2(static_cast<size_t>(n));

  // k-means++: first centroid uniform, then distance-squared sampling.
  int64_t first = rng.uniform_int(0, n - 1);
  std::memcpy(cent.data(), points.ptr(first), sizeof(double) * static_cast<size_t>(d));
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* p = points.ptr(i);
    for (int64_t j = 0; j < d; ++j) {
      double diff = p[j] - cent[static_cast<size_t>(j)];
      s += diff * diff;
    }
    best_d2[static_cast<size_t>(i)] = s;
  }
  for (int64_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double x : best_d2) total += x;
    require(total > 0.0, Err::too_few_points, "fit_codebook: fewer distinct points than clusters");
    double r = rng.uniform() * total;
    int64_t pick = n - 1;
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      acc += best_d2[static_cast<size_t>(i)];
      if (acc >= r) { pick = i; break; }
    }
    std::memcpy(cent.data() + c * d, points.ptr(pick), sizeof(double) * static_cast<size_t>(d));
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      const double* p = points.ptr(i);
      const double* cc = cent.data() + c * d;
      for (int64_t j = 0; j < d; ++j) {
        double diff = p[j] - cc[j];
        s += diff * diff;
      }
      best_d2[static_cast<size_t>(i)] = std::min(best_d2[static_cast<size_t>(i)], s);
    }
  }

  std::vector<int64_t> assign(static_cast<size_t>(n), -1);
  std::vector<int64_t> counts(static_cast<size_t>(k));
  std::vector<double> sums(static_cast<size_t>(k * d));
  double prev_inertia = -1.0;
  bool converged = false;
  if (trace) *trace = {};

  for (int64_t it = 0; it < iters; ++it) {
    // assignment step, ties broken by the lower centroid index
    bool changed = false;
    double inertia = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double* p = points.ptr(i);
      double best = 1e300;
      int64_t bc = 0;
      for (int64_t c = 0; c < k; ++c) {
        const double* cc = cent.data() + c * d;
        double s = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          double diff = p[j] - cc[j];
          s += diff * diff;
        }
        if (s < best) { best = s; bc = c; }
      }
      inertia += best;
      if (assign[static_cast<size_t>(i)] != bc) changed = true;
      assign[static_cast<size_t>(i)] = bc;
    }
    // Lloyd guarantees monotone inertia; a violation means a bug upstream.
    require(prev_inertia < 0.0 || inertia <= prev_inertia + 1e-9 * (1.0 + prev_inertia),
            Err::non_finite, "fit_codebook: inertia increased");
    prev_inertia = inertia;
    if (trace) {
      trace->inertia_per_iter.push_back(inertia);
      trace->iterations = it + 1;
    }
    if (!changed && it > 0) {
      converged = true;
      break;
    }

    // update step
    std::fill(counts.begin(), counts.end(), 0);
    std::fill(sums.begin(), sums.end(), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      int64_t c = assign[static_cast<size_t>(i)];
      ++counts[static_cast<size_t>(c)];
      const double* p = points.ptr(i);
      double* s = sums.data() + c * d;
      for (int64_t j = 0; j < d; ++j) s[j] += p[j];
    }
    for (int64_t c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] == 0) {
        // re-seed to the point farthest from its assigned centroid
        double far_d = -1.0;
        int64_t far_i = 0;
        for (int64_t i = 0; i < n; ++i) {
          const double* p = points.ptr(i);
          const double* cc = cent.data() + assign[static_cast<size_t>(i)] * d;
          double s = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            double diff = p[j] - cc[j];
            s += diff * diff;
          }
          if (s > far_d && counts[static_cast<size_t>(assign[static_cast<size_t>(i)])] > 1) {
            far_d = s;
            far_i = i;
          }
        }
        --counts[static_cast<size_t>(assign[static_cast<size_t>(far_i)])];
        assign[static_cast<size_t>(far_i)] = c;
        counts[static_cast<size_t>(c)] = 1;
        std::memcpy(cent.data() + c * d, points.ptr(far_i), sizeof(double) * static_cast<size_t>(d));
        prev_inertia = -1.0;  // assignment was changed by hand
        if (trace) ++trace->reseeds;
      } else {
        double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(c)]);
        for (int64_t j = 0; j < d; ++j) cent[static_cast<size_t>(c * d + j)] = sums[static_cast<size_t>(c * d + j)] * inv;
      }
    }
  }

  if (trace) {
    // fixed-point diagnostics in full precision, against the pre-quantized
    // centroids: assignments must be nearest, centroids must be the means
    trace->converged = converged;
    trace->nearest_ok = true;
    for (int64_t i = 0; i < n; ++i) {
      const double* p = points.ptr(i);
      double best = 1e300;
      int64_t bc = 0;
      for (int64_t c = 0; c < k; ++c) {
        double s = 0.0;
        const double* cc = cent.data() + c * d;
        for (int64_t j = 0; j < d; ++j) {
          double diff = p[j] - cc[j];
          s += diff * diff;
        }
        if (s < best) { best = s; bc = c; }
      }
      if (bc != assign[static_cast<size_t>(i)]) trace->nearest_ok = false;
    }
    std::fill(counts.begin(), counts.end(), 0);
    std::fill(sums.begin(), sums.end(), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      int64_t c = assign[static_cast<size_t>(i)];
      ++counts[static_cast<size_t>(c)];
      const double* p = points.ptr(i);
      for (int64_t j = 0; j < d; ++j) sums[static_cast<size_t>(c * d + j)] += p[j];
    }
    for (int64_t c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] == 0) continue;
      double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(c)]);
      for (int64_t j = 0; j < d; ++j) {
        double mean = sums[static_cast<size_t>(c * d + j)] * inv;
        trace->fixed_point_max_err =
            std::max(trace->fixed_point_max_err, std::abs(mean - cent[static_cast<size_t>(c * d + j)]));
      }
    }
  }

  Codebook cb;
  cb.k = k;
  cb.d = d;
  cb.provider_id = provider_id;
  cb.frame_rate = frame_rate;
  cb.centroids.resize(static_cast<size_t>(k * d));
  for (size_t i = 0; i < cb.centroids.size(); ++i) cb.centroids[i] = static_cast<float>(cent[i]);
  return cb;
}

// Nearest-centroid ids (squared Euclidean, ties to the lower index) with a
// terminal SEM_STOP appended.
inline SemanticTokenSeq encode_tokens(const FrameEmbeddingSeq& e, const Codebook& cb) {
  require(e.frames.cols == cb.d, Err::dim_mismatch, "encode_tokens: dimension mismatch");
  SemanticTokenSeq seq;
  seq.stop_id = cb.sem_stop();
  seq.ids.reserve(static_cast<size_t>(e.frames.rows) + 1);
  for (int64_t t = 0; t < e.frames.rows; ++t) {
    const double* p = e.frames.ptr(t);
    double best = 1e300;
    int64_t bc = 0;
    for (int64_t c = 0; c < cb.k; ++c) {
      const float* cc = cb.row(c);
      double s = 0.0;
      for (int64_t j = 0; j < cb.d; ++j) {
        double diff = p[j] - static_cast<double>(cc[j]);
        s += diff * diff;
      }
      if (s < best) { best = s; bc = c; }
    }
    seq.ids.push_back(bc);
  }
  seq.ids.push_back(cb.sem_stop());
  return seq;
}

// =====================================================================
//  Binary formats: "MHCB" codebook, "MHEM" embedding sidecar
// =====================================================================

namespace detail {

inline void put_u32le(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16le(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_f32le(std::string& s, float f) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32le(s, u);
}

struct ByteReader {
  const unsigned char* p;
  size_t n;
  size_t pos = 0;
  std::string what;

  void need(size_t k, const char* field) {
    require(pos + k <= n, Err::truncated_file, what + ": truncated at " + field);
  }
  uint32_t u32(const char* field) {
    need(4, field);
    uint32_t v = static_cast<uint32_t>(p[pos]) | (static_cast<uint32_t>(p[pos + 1]) << 8) |
                 (static_cast<uint32_t>(p[pos + 2]) << 16) | (static_cast<uint32_t>(p[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  uint16_t u16(const char* field) {
    need(2, field);
    uint16_t v = static_cast<uint16_t>(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  float f32(const char* field) {
    uint32_t u = u32(field);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
  std::string bytes(size_t k, const char* field) {
    need(k, field);
    std::string s(reinterpret_cast<const char*>(p + pos), k);
    pos += k;
    return s;
  }
};

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Err::missing_file, "cannot open " + path);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), Err::write_failed, "cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(out.good(), Err::write_failed, "short write: " + tmp);
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, Err::write_failed, "cannot rename to " + path);
}

}  // namespace detail

inline void validate_codebook(const Codebook& cb) {
  require(cb.k >= 2 && cb.d >= 1, Err::bad_argument, "codebook: bad dims");
  require(cb.centroids.size() == static_cast<size_t>(cb.k * cb.d), Err::shape_mismatch,
          "codebook: centroid buffer size");
  std::unordered_set<uint64_t> seen;
  for (int64_t c = 0; c < cb.k; ++c) {
    uint64_t h = fnv1a64(cb.row(c), sizeof(float) * static_cast<size_t>(cb.d));
    require(seen.insert(h).second, Err::bad_argument, "codebook: duplicate centroids");
  }
}

inline std::string serialize_codebook(const Codebook& cb) {
  std::string out = "MHCB";
  detail::put_u32le(out, 1);  // version
  detail::put_u32le(out, static_cast<uint32_t>(cb.k));
  detail::put_u32le(out, static_cast<uint32_t>(cb.d));
  detail::put_u32le(out, static_cast<uint32_t>(cb.frame_rate));
  detail::put_u16le(out, static_cast<uint16_t>(cb.provider_id.size()));
  out += cb.provider_id;
  for (float f : cb.centroids) detail::put_f32le(out, f);
  return out;
}

inline void save_codebook(const Codebook& cb, const std::string& path) {
  validate_codebook(cb);
  detail::write_file(path, serialize_codebook(cb));
}

inline Codebook parse_codebook(const unsigned char* data, size_t n, const std::string& what) {
  detail::ByteReader r{data, n, 0, what};
  require(r.bytes(4, "magic") == "MHCB", Err::bad_magic, what + ": bad magic");
  uint32_t version = r.u32("version");
  require(version == 1, Err::bad_version, what + ": unsupported version");
  Codebook cb;
  cb.k = r.u32("k");
  cb.d = r.u32("d");
  cb.frame_rate = static_cast<int>(r.u32("frame_rate"));
  uint16_t plen = r.u16("provider_id length");
  cb.provider_id = r.bytes(plen, "provider_id");
  cb.centroids.resize(static_cast<size_t>(cb.k * cb.d));
  for (auto& f : cb.centroids) f = r.f32("centroids");
  require(r.pos == n, Err::malformed_file, what + ": trailing bytes");
  return cb;
}

inline Codebook load_codebook(const std::string& path) {
  auto bytes = detail::read_file(path);
  return parse_codebook(bytes.data(), bytes.size(), path);
}

inline uint64_t codebook_hash(const Codebook& cb) {
  std::string s = serialize_codebook(cb);
  return fnv1a64(s.data(), s.size());
}

inline std::string serialize_embeddings(const FrameEmbeddingSeq& e, const std::string& provider_id) {
  std::string out = "MHEM";
  detail::put_u32le(out, 1);
  detail::put_u32le(out, static_cast<uint32_t>(e.frames.rows));
  detail::put_u32le(out, static_cast<uint32_t>(e.frames.cols));
  detail::put_u32le(out, static_cast<uint32_t>(e.frame_rate));
  detail::put_u16le(out, static_cast<uint16_t>(provider_id.size()));
  out += provider_id;
  for (double x : e.frames.v) detail::put_f32le(out, static_cast<float>(x));
  return out;
}

inline void save_embeddings(const FrameEmbeddingSeq& e, const std::string& provider_id,
                            const std::string& path) {
  detail::write_file(path, serialize_embeddings(e, provider_id));
}

inline FrameEmbeddingSeq load_embeddings(const std::string& path, std::string* provider_id = nullptr) {
  auto bytes = detail::read_file(path);
  detail::ByteReader r{bytes.data(), bytes.size(), 0, path};
  require(r.bytes(4, "magic") == "MHEM", Err::bad_magic, path + ": bad magic");
  require(r.u32("version") == 1, Err::bad_version, path + ": unsupported version");
  FrameEmbeddingSeq e;
  int64_t t = r.u32("t");
  int64_t d = r.u32("d");
  e.frame_rate = static_cast<int>(r.u32("frame_rate"));
  uint16_t plen = r.u16("provider_id length");
  std::string pid = r.bytes(plen, "provider_id");
  if (provider_id) *provider_id = pid;
  e.frames = Tensor(t, d);
  for (auto& x : e.frames.v) x = static_cast<double>(r.f32("frames"));
  require(r.pos == bytes.size(), Err::malformed_file, path + ": trailing bytes");
  return e;
}

inline FrameEmbeddingSeq SidecarProvider::extract(const Waveform&,
                                                  const std::string& source_path) const {
  require(!source_path.empty(), Err::provider_failure, "sidecar provider needs a source path");
  std::string path = source_path + ".mhem";
  std::ifstream probe(path, std::ios::binary);
  require(probe.good(), Err::sidecar_missing, "missing sidecar " + path);
  probe.close();
  return load_embeddings(path);
}

}  // namespace mahaflow
