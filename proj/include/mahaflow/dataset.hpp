#pragma once

#include <string>
#include <vector>

#include "mahaflow/flow.hpp"
#include "mahaflow/pipeline.hpp"
#include "mahaflow/semantic.hpp"
#include "mahaflow/synth.hpp"
#include "mahaflow/trainer.hpp"

namespace mahaflow {

// Manifest -> training examples. Audio is loaded per record, resampled to
// 24 kHz and sliced to [offset, offset+duration); references come from
// select_references (same-speaker nearest clips).

inline Waveform load_record_audio(const ClipRecord& rec) {
  Waveform w = resample(load_wav(rec.audio_path), 24000);
  return detail::slice(w, rec.offset_s, rec.offset_s + rec.duration_s);
}

inline std::vector<Tensor> reference_frames_for(const ClipRecord& rec, const Manifest& manifest,
                                                const MelConfig& mel) {
  std::vector<ClipRecord> refs = select_references(rec, manifest);
  std::vector<Tensor> out;
  for (const auto& r : refs) out.push_back(mel_spectrogram(load_record_audio(r), mel).frames);
  return out;
}

// Records whose speaker has no other clip cannot be reference-conditioned
// and are skipped rather than failing the run.
inline bool try_reference_frames(const ClipRecord& rec, const Manifest& manifest,
                                 const MelConfig& mel, std::vector<Tensor>* out) {
  try {
    *out = reference_frames_for(rec, manifest, mel);
    return true;
  } catch (const Error& e) {
    if (e.code() == Err::empty_input) return false;
    throw;
  }
}

inline std::vector<M1Example> prepare_m1_dataset(const Manifest& manifest, const CharVocab& vocab,
                                                 const LanguageTable& langs, const Codebook& cb,
                                                 const FrameEmbeddingProvider& provider,
                                                 const MelConfig& mel, int64_t max_seq_len) {
  std::vector<M1Example> out;
  for (const auto& rec : manifest) {
    Waveform clip = load_record_audio(rec);
    FrameEmbeddingSeq emb = extract_frame_embeddings(clip, provider, rec.audio_path);
    if (emb.frames.rows < 1) continue;
    M1Example ex;
    ex.lang_id = langs.id_of(rec.language);
    ex.text_ids = encode_text(rec.text, rec.language, vocab, langs).ids;
    ex.sem_ids = encode_tokens(emb, cb).ids;
    if (!try_reference_frames(rec, manifest, mel, &ex.ref_mels)) continue;
    if (ex.length() > max_seq_len) continue;  // overlong samples are skipped, not truncated
    out.push_back(std::move(ex));
  }
  require(!out.empty(), Err::empty_input, "prepare_m1_dataset: no usable records");
  return out;
}

inline std::vector<M2Example> prepare_m2_dataset(const Manifest& manifest, const Codebook& cb,
                                                 const FrameEmbeddingProvider& provider,
                                                 const MelConfig& mel, double crop_seconds) {
  const int64_t upsample = mel.frame_rate() / 25;  // mel frames per token at 25 Hz tokens
  std::vector<M2Example> out;
  for (const auto& rec : manifest) {
    Waveform clip = load_record_audio(rec);
    FrameEmbeddingSeq emb = extract_frame_embeddings(clip, provider, rec.audio_path);
    if (emb.frames.rows < 1) continue;
    SemanticTokenSeq tokens = encode_tokens(emb, cb);
    std::vector<int64_t> y = upsample_tokens(tokens, upsample);
    MelSpectrogram m = mel_spectrogram(clip, mel);
    int64_t crop = static_cast<int64_t>(crop_seconds * mel.frame_rate());
    int64_t len = std::min({static_cast<int64_t>(y.size()), m.frames.rows, crop});
    if (len < upsample) continue;
    len -= len % upsample;  // keep whole tokens
    M2Example ex;
    ex.x1 = Tensor(len, mel.n_mels);
    for (int64_t t = 0; t < len; ++t)
      std::copy(m.frames.ptr(t), m.frames.ptr(t) + mel.n_mels, ex.x1.ptr(t));
    ex.y_frames.assign(y.begin(), y.begin() + len);
    if (!try_reference_frames(rec, manifest, mel, &ex.ref_mels)) continue;
    out.push_back(std::move(ex));
  }
  require(!out.empty(), Err::empty_input, "prepare_m2_dataset: no usable records");
  return out;
}

// Pools frame embeddings over all records for codebook fitting.
inline Tensor pool_embeddings(const Manifest& manifest, const FrameEmbeddingProvider& provider) {
  std::vector<Tensor> seqs;
  int64_t total = 0, d = 0;
  for (const auto& rec : manifest) {
    Waveform clip = load_record_audio(rec);
    FrameEmbeddingSeq emb = extract_frame_embeddings(clip, provider, rec.audio_path);
    if (emb.frames.rows == 0) continue;
    total += emb.frames.rows;
    d = emb.frames.cols;
    seqs.push_back(std::move(emb.frames));
  }
  require(total > 0, Err::empty_input, "pool_embeddings: no frames");
  Tensor out(total, d);
  int64_t r = 0;
  for (const auto& s : seqs) {
    std::copy(s.v.begin(), s.v.end(), out.ptr(r));
    r += s.rows;
  }
  return out;
}

}  // namespace mahaflow
