#pragma once

#include <vector>

#include "mahaflow/common.hpp"
#include "mahaflow/wav.hpp"

namespace mahaflow {

struct Segment {
  double start_s = 0.0;
  double end_s = 0.0;

  double duration() const { return end_s - start_s; }
};

struct VadConfig {
  double frame_ms = 30.0;
  double rms_threshold = 0.01;
  int hangover_frames = 5;   // gaps up to this many frames are bridged
  double min_keep_s = 0.2;   // shorter islands are noise, dropped here;
                             // the [1,30] s bounds are enforced later
};

// Per-frame RMS over non-overlapping frames.
inline std::vector<double> frame_rms(const Waveform& w, double frame_ms) {
  int64_t frame_len = static_cast<int64_t>(frame_ms * 1e-3 * w.sample_rate);
  require(frame_len >= 1, Err::bad_argument, "frame_rms: frame too short");
  int64_t n_frames = static_cast<int64_t>(w.samples.size()) / frame_len;
  std::vector<double> out(static_cast<size_t>(n_frames));
  for (int64_t t = 0; t < n_frames; ++t) {
    double acc = 0.0;
    const double* x = w.samples.data() + t * frame_len;
    for (int64_t i = 0; i < frame_len; ++i) acc += x[i] * x[i];
    out[static_cast<size_t>(t)] = std::sqrt(acc / static_cast<double>(frame_len));
  }
  return out;
}

// Activity mask -> segments: frames at/above threshold are active, gaps of
// at most `hangover` frames are merged, islands shorter than min_keep_s
// are dropped.
inline std::vector<Segment> segments_from_activity(const std::vector<double>& rms, double threshold,
                                                   int hangover, double frame_s,
                                                   double min_keep_s) {
  std::vector<std::pair<int64_t, int64_t>> runs;  // [first, last] active frames
  int64_t n = static_cast<int64_t>(rms.size());
  int64_t run_start = -1;
  for (int64_t i = 0; i <= n; ++i) {
    bool active = i < n && rms[static_cast<size_t>(i)] >= threshold;
    if (active && run_start < 0) run_start = i;
    if (!active && run_start >= 0) {
      runs.emplace_back(run_start, i - 1);
      run_start = -1;
    }
  }
  // bridge short gaps
  std::vector<std::pair<int64_t, int64_t>> merged;
  for (const auto& r : runs) {
    if (!merged.empty() && r.first - merged.back().second - 1 <= hangover)
      merged.back().second = r.second;
    else
      merged.push_back(r);
  }
  std::vector<Segment> out;
  for (const auto& r : merged) {
    Segment s{static_cast<double>(r.first) * frame_s, static_cast<double>(r.second + 1) * frame_s};
    if (s.duration() >= min_keep_s) out.push_back(s);
  }
  return out;
}

inline std::vector<Segment> detect_speech(const Waveform& w, const VadConfig& cfg = {}) {
  std::vector<double> rms = frame_rms(w, cfg.frame_ms);
  return segments_from_activity(rms, cfg.rms_threshold, cfg.hangover_frames, cfg.frame_ms * 1e-3,
                                cfg.min_keep_s);
}

namespace detail {

// Split an over-long segment at the minimum-energy frame inside its middle
// third, recursively, so every piece lands at or under max_s.
inline void split_segment(const Segment& seg, double max_s, const std::vector<double>& energy,
                          double frame_s, std::vector<Segment>& out) {
  if (seg.duration() <= max_s) {
    out.push_back(seg);
    return;
  }
  int64_t f0 = static_cast<int64_t>(std::llround(seg.start_s / frame_s));
  int64_t f1 = static_cast<int64_t>(std::llround(seg.end_s / frame_s));
  int64_t n = f1 - f0;
  int64_t lo = f0 + n / 3;
  int64_t hi = f0 + (2 * n) / 3;
  if (hi <= lo) hi = lo + 1;
  int64_t best = lo;
  double best_e = 1e300;
  for (int64_t f = lo; f < hi; ++f) {
    double e = (f >= 0 && f < static_cast<int64_t>(energy.size())) ? energy[static_cast<size_t>(f)] : 0.0;
    if (e < best_e) {
      best_e = e;
      best = f;
    }
  }
  double split_t = static_cast<double>(best) * frame_s;
  split_segment({seg.start_s, split_t}, max_s, energy, frame_s, out);
  split_segment({split_t, seg.end_s}, max_s, energy, frame_s, out);
}

}  // namespace detail

// Duration-bounded recursive segmentation: pieces above max_s are split at
// low-energy frames; pieces under min_s are merged into a touching sibling
// when the union stays within max_s, otherwise dropped.
inline std::vector<Segment> recursive_segment(const std::vector<Segment>& segments,
                                              double min_s, double max_s,
                                              const std::vector<double>& energy,
                                              double frame_s = 0.03,
                                              std::vector<Segment>* dropped = nullptr) {
  require(min_s > 0.0 && max_s > min_s, Err::bad_argument, "recursive_segment: bad bounds");
  std::vector<Segment> out;
  for (const Segment& seg : segments) {
    std::vector<Segment> pieces;
    detail::split_segment(seg, max_s, energy, frame_s, pieces);

    // merge sub-min pieces into touching siblings
    bool changed = true;
    while (changed) {
      changed = false;
      for (size_t i = 0; i < pieces.size(); ++i) {
        if (pieces[i].duration() >= min_s) continue;
        auto touching = [&](size_t a, size_t b) {
          return std::abs(pieces[a].end_s - pieces[b].start_s) < 1e-9;
        };
        if (i + 1 < pieces.size() && touching(i, i + 1) &&
            pieces[i + 1].end_s - pieces[i].start_s <= max_s) {
          pieces[i + 1].start_s = pieces[i].start_s;
          pieces.erase(pieces.begin() + static_cast<int64_t>(i));
          changed = true;
          break;
        }
        if (i > 0 && touching(i - 1, i) && pieces[i].end_s - pieces[i - 1].start_s <= max_s) {
          pieces[i - 1].end_s = pieces[i].end_s;
          pieces.erase(pieces.begin() + static_cast<int64_t>(i));
          changed = true;
          break;
        }
      }
    }
    for (const Segment& p : pieces) {
      if (p.duration() >= min_s)
        out.push_back(p);
      else if (dropped)
        dropped->push_back(p);
    }
  }
  std::sort(out.begin(), out.end(), [](const Segment& a, const Segment& b) { return a.start_s < b.start_s; });
  return out;
}

}  // namespace mahaflow
