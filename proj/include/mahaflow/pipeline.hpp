#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mahaflow/dsp.hpp"
#include "mahaflow/manifest.hpp"
#include "mahaflow/text.hpp"
#include "mahaflow/unicode.hpp"
#include "mahaflow/vad.hpp"
#include "mahaflow/wav.hpp"

namespace mahaflow {

// =====================================================================
//  Quality screening (heuristic default; provider is pluggable)
// =====================================================================

struct QualityConfig {
  double clip_ratio_max = 0.01;      // fraction of |x| > 0.999
  double speech_rms_floor = 0.01;    // p90 frame RMS below this => no speech
  double min_active_fraction = 0.05;
  double snr_reference_db = 30.0;    // score = (ref - snr)/ref clamped to [0,1]
  double background_threshold = 0.5;
  double music_threshold = 0.6;
  double multi_speaker_threshold = 0.5;
  double frame_ms = 30.0;
};

struct QualityReport {
  std::vector<std::string> labels;
  double clean = 0.0;
  double background_noise = 0.0;
  double music = 0.0;
  double multiple_speakers = 0.0;
  double snr_db = 0.0;
  bool accepted = false;
};

using QualityProvider = std::function<QualityReport(const Waveform&)>;

inline QualityReport quality_check(const Waveform& w, const QualityConfig& cfg = {}) {
  QualityReport rep;
  if (w.samples.empty()) return rep;

  std::vector<double> rms = frame_rms(w, cfg.frame_ms);
  if (rms.empty()) return rep;
  std::vector<double> sorted = rms;
  std::sort(sorted.begin(), sorted.end());
  auto pct = [&](double q) {
    size_t i = static_cast<size_t>(q * static_cast<double>(sorted.size() - 1));
    return sorted[i];
  };
  double p10 = pct(0.10), p90 = pct(0.90);
  rep.snr_db = 20.0 * std::log10(std::max(p90, 1e-9) / std::max(p10, 1e-5));

  double clip = 0.0;
  for (double x : w.samples)
    if (std::abs(x) > 0.999) clip += 1.0;
  clip /= static_cast<double>(w.samples.size());

  // Per active frame: spectral flatness (tonality cue) and the dominant
  // bin (pitch-steadiness cue). Music-like audio is tonal, continuous, and
  // pitch-steady; speech is tonal but keeps moving.
  double active_threshold = std::max(cfg.speech_rms_floor, 0.1 * p90);
  int64_t frame_len = static_cast<int64_t>(cfg.frame_ms * 1e-3 * w.sample_rate);
  double active = 0.0;
  double flatness_acc = 0.0;
  int64_t flat_count = 0;
  std::map<int64_t, int64_t> peak_bins;
  std::vector<dsp::cplx> buf(1024);
  std::vector<double> window = dsp::hann(std::min<int64_t>(frame_len, 1024));
  for (size_t t = 0; t < rms.size(); ++t) {
    if (rms[t] < active_threshold) continue;
    active += 1.0;
    if (flat_count < 128) {
      std::fill(buf.begin(), buf.end(), dsp::cplx(0.0, 0.0));
      int64_t n = std::min<int64_t>(frame_len, 1024);
      const double* x = w.samples.data() + static_cast<int64_t>(t) * frame_len;
      for (int64_t i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = x[i] * window[static_cast<size_t>(i)];
      dsp::fft(buf, false);
      double logsum = 0.0, sum = 0.0, best_mag = -1.0;
      int64_t best_bin = 0;
      const int64_t bins = 512;
      for (int64_t k = 1; k <= bins; ++k) {
        double m = std::abs(buf[static_cast<size_t>(k)]) + 1e-12;
        logsum += std::log(m);
        sum += m;
        if (m > best_mag) {
          best_mag = m;
          best_bin = k;
        }
      }
      double flat = std::exp(logsum / static_cast<double>(bins)) / (sum / static_cast<double>(bins));
      flatness_acc += flat;
      ++peak_bins[best_bin];
      ++flat_count;
    }
  }
  double active_fraction = active / static_cast<double>(rms.size());

  bool speech_present = p90 >= cfg.speech_rms_floor && active_fraction >= cfg.min_active_fraction &&
                        clip <= cfg.clip_ratio_max;
  rep.clean = speech_present ? 1.0 : 0.0;
  rep.background_noise =
      std::clamp((cfg.snr_reference_db - rep.snr_db) / cfg.snr_reference_db, 0.0, 1.0);
  double tonality = 0.0, steadiness = 0.0;
  if (flat_count > 0) {
    double flat_db = 10.0 * std::log10(std::max(flatness_acc / static_cast<double>(flat_count), 1e-12));
    tonality = std::clamp((-flat_db - 20.0) / 20.0, 0.0, 1.0);
    int64_t modal = 0;
    for (const auto& [bin, count] : peak_bins) modal = std::max(modal, count);
    steadiness = static_cast<double>(modal) / static_cast<double>(flat_count);
  }
  rep.music = tonality * steadiness * active_fraction;
  rep.multiple_speakers = 0.0;  // no cue in the heuristic provider

  if (rep.clean >= 0.5) rep.labels.push_back("clean");
  if (rep.background_noise > cfg.background_threshold) rep.labels.push_back("background_noise");
  if (rep.music > cfg.music_threshold) rep.labels.push_back("music");
  if (rep.multiple_speakers > cfg.multi_speaker_threshold) rep.labels.push_back("multiple_speakers");
  rep.accepted = rep.clean >= 0.5 && rep.background_noise <= cfg.background_threshold &&
                 rep.music <= cfg.music_threshold &&
                 rep.multiple_speakers <= cfg.multi_speaker_threshold;
  return rep;
}

// =====================================================================
//  Dual-ASR agreement (backends injected; none bundled)
// =====================================================================

struct AgreementResult {
  double distance = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

// Codepoint-level normalized Levenshtein on NFC text.
inline AgreementResult asr_agreement(const std::string& t1, const std::string& t2,
                                     double threshold = 0.2) {
  std::vector<uint32_t> a = uni::utf8_decode(uni::nfc(t1));
  std::vector<uint32_t> b = uni::utf8_decode(uni::nfc(t2));
  double denom = static_cast<double>(std::max<size_t>({a.size(), b.size(), 1}));
  AgreementResult r;
  r.distance = static_cast<double>(levenshtein(a, b)) / denom;
  r.threshold = threshold;
  r.pass = r.distance <= threshold;
  return r;
}

using AsrBackend = std::function<std::string(const Waveform&)>;

// =====================================================================
//  Concatenation augmentation (context-window growth)
// =====================================================================

// Chains contiguous same-speaker, same-source records (gap <= gap_tol so
// the augmented span stays loadable from one (path, offset, duration))
// while the total stays within target_max_s. Originals are retained; each
// chain of two or more records adds one augmented record.
inline Manifest augment_concat(const Manifest& manifest, double target_max_s = 30.0,
                               uint64_t /*seed*/ = 0, double gap_tol = 0.25) {
  std::vector<size_t> order(manifest.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const ClipRecord &ra = manifest[a], &rb = manifest[b];
    if (ra.source_id != rb.source_id) return ra.source_id < rb.source_id;
    return ra.offset_s < rb.offset_s;
  });

  Manifest out = manifest;
  size_t i = 0;
  while (i < order.size()) {
    const ClipRecord& first = manifest[order[i]];
    size_t j = i;
    double span_end = first.offset_s + first.duration_s;
    std::string text = first.text;
    while (j + 1 < order.size()) {
      const ClipRecord& prev = manifest[order[j]];
      const ClipRecord& next = manifest[order[j + 1]];
      if (next.source_id != first.source_id || next.audio_path != first.audio_path ||
          next.speaker_id != first.speaker_id || next.language != first.language)
        break;
      if (prev.augmented || next.augmented) break;
      double gap = next.offset_s - (prev.offset_s + prev.duration_s);
      if (gap < -1e-9 || gap > gap_tol) break;
      double new_span = next.offset_s + next.duration_s - first.offset_s;
      if (new_span > target_max_s) break;
      span_end = next.offset_s + next.duration_s;
      text += " " + next.text;
      ++j;
    }
    if (j > i) {
      ClipRecord aug = first;
      aug.duration_s = span_end - first.offset_s;
      aug.text = text;
      aug.augmented = true;
      out.push_back(aug);
    }
    i = j + 1;
  }
  return out;
}

// =====================================================================
//  Ingestion: raw directory -> manifest + rejection log
// =====================================================================

struct PipelineConfig {
  VadConfig vad;
  QualityConfig quality;
  double min_segment_s = 1.0;
  double max_segment_s = 30.0;
  double agreement_threshold = 0.2;
  NuktaMap nukta;
  LanguageTable languages = LanguageTable::defaults();
  std::optional<std::pair<AsrBackend, AsrBackend>> asr;  // absent => stage skipped
  QualityProvider quality_provider;                      // absent => heuristic default
};

struct IngestResult {
  Manifest manifest;
  std::vector<Rejection> rejections;
};

namespace detail {

struct RawEntry {
  std::string wav_path;
  std::string source_id;
  std::string text;
  std::string language;
  std::string speaker_id;
};

inline Waveform slice(const Waveform& w, double start_s, double end_s) {
  size_t a = static_cast<size_t>(std::max(0.0, start_s) * w.sample_rate);
  size_t b = std::min(w.samples.size(), static_cast<size_t>(end_s * w.sample_rate));
  Waveform out;
  out.sample_rate = w.sample_rate;
  if (b > a) out.samples.assign(w.samples.begin() + static_cast<int64_t>(a), w.samples.begin() + static_cast<int64_t>(b));
  return out;
}

inline IngestResult ingest_one(const RawEntry& entry, const PipelineConfig& cfg) {
  IngestResult res;
  Waveform w;
  try {
    w = load_wav(entry.wav_path);
  } catch (const Error& e) {
    res.rejections.push_back({"load", e.what(), entry.wav_path, 0.0, 0.0});
    return res;
  }
  if (!cfg.languages.contains(entry.language)) {
    res.rejections.push_back({"language", "unsupported language " + entry.language, entry.wav_path, 0.0, 0.0});
    return res;
  }
  w = resample(w, 24000);
  std::vector<double> energy = frame_rms(w, cfg.vad.frame_ms);
  std::vector<Segment> detected = detect_speech(w, cfg.vad);
  if (detected.empty()) {
    res.rejections.push_back({"vad", "no speech detected", entry.wav_path, 0.0, w.duration_s()});
    return res;
  }
  std::vector<Segment> dropped;
  std::vector<Segment> segments = recursive_segment(detected, cfg.min_segment_s, cfg.max_segment_s,
                                                    energy, cfg.vad.frame_ms * 1e-3, &dropped);
  for (const Segment& d : dropped)
    res.rejections.push_back({"segment", "below minimum duration", entry.wav_path, d.start_s, d.end_s});

  for (const Segment& seg : segments) {
    Waveform clip = slice(w, seg.start_s, seg.end_s);
    QualityReport q = cfg.quality_provider ? cfg.quality_provider(clip)
                                           : quality_check(clip, cfg.quality);
    if (!q.accepted) {
      std::string why = "not clean";
      for (const auto& l : q.labels)
        if (l != "clean") why = l;
      res.rejections.push_back({"quality", why, entry.wav_path, seg.start_s, seg.end_s});
      continue;
    }
    std::string text = entry.text;
    if (cfg.asr) {
      std::string h1 = cfg.asr->first(clip);
      std::string h2 = cfg.asr->second(clip);
      AgreementResult agree = asr_agreement(h1, h2, cfg.agreement_threshold);
      if (!agree.pass) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "distance %.4f above %.4f", agree.distance, agree.threshold);
        res.rejections.push_back({"agreement", buf, entry.wav_path, seg.start_s, seg.end_s});
        continue;
      }
      text = h1;
    }
    text = apply_nukta(text, cfg.nukta);
    if (text.empty()) {
      res.rejections.push_back({"text", "empty transcript", entry.wav_path, seg.start_s, seg.end_s});
      continue;
    }
    ClipRecord rec;
    rec.audio_path = entry.wav_path;
    rec.source_id = entry.source_id;
    rec.offset_s = seg.start_s;
    rec.duration_s = seg.duration();
    rec.text = text;
    rec.language = entry.language;
    rec.speaker_id = entry.speaker_id;
    res.manifest.push_back(rec);
  }
  return res;
}

}  // namespace detail

// Scans `raw_dir` for X.wav + X.json pairs (json: text/language/speaker_id),
// runs the cleaning pipeline per file, and merges results in sorted path
// order so output bytes are deterministic at any thread count.
inline IngestResult build_manifest(const std::string& raw_dir, const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  std::vector<detail::RawEntry> entries;
  std::vector<Rejection> early;
  std::vector<std::string> wavs;
  if (fs::exists(raw_dir))
    for (const auto& e : fs::directory_iterator(raw_dir))
      if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path().string());
  std::sort(wavs.begin(), wavs.end());

  for (const std::string& wav : wavs) {
    fs::path meta = fs::path(wav).replace_extension(".json");
    std::ifstream f(meta);
    if (!f.good()) {
      early.push_back({"meta", "missing sidecar " + meta.string(), wav, 0.0, 0.0});
      continue;
    }
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded() || !j.contains("text") || !j.contains("language") ||
        !j.contains("speaker_id")) {
      early.push_back({"meta", "bad sidecar " + meta.string(), wav, 0.0, 0.0});
      continue;
    }
    detail::RawEntry entry;
    entry.wav_path = wav;
    entry.source_id = fs::path(wav).stem().string();
    entry.text = j["text"].get<std::string>();
    entry.language = j["language"].get<std::string>();
    entry.speaker_id = j["speaker_id"].get<std::string>();
    entries.push_back(entry);
  }

  std::vector<IngestResult> per_file(entries.size());
  int threads = std::min<int>(env_thread_cap(), static_cast<int>(entries.size()));
  if (threads <= 1) {
    for (size_t i = 0; i < entries.size(); ++i) per_file[i] = detail::ingest_one(entries[i], cfg);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < entries.size(); i = next.fetch_add(1))
          per_file[i] = detail::ingest_one(entries[i], cfg);
      });
    for (auto& th : pool) th.join();
  }

  IngestResult out;
  out.rejections = std::move(early);
  for (auto& r : per_file) {
    out.manifest.insert(out.manifest.end(), r.manifest.begin(), r.manifest.end());
    out.rejections.insert(out.rejections.end(), r.rejections.begin(), r.rejections.end());
  }
  return out;
}

}  // namespace mahaflow
