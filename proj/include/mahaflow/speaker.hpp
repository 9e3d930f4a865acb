#pragma once

#include <string>
#include <vector>

#include "mahaflow/manifest.hpp"
#include "mahaflow/mel.hpp"
#include "mahaflow/nn.hpp"

namespace mahaflow {

struct SpeakerEncoderConfig {
  int64_t n_layers = 2;  // reference system uses 6
  int64_t d_model = 64;
  int64_t n_heads = 4;
  int64_t n_mels = 80;
  int64_t out_dim = 64;  // reference system uses 1024

  void validate() const {
    require(n_layers >= 1 && d_model >= 1 && out_dim >= 1, Err::bad_argument,
            "speaker encoder: dims must be positive");
    require(d_model % n_heads == 0, Err::bad_argument,
            "speaker encoder: d_model must be divisible by n_heads");
  }
};

using SpeakerEmbedding = std::vector<double>;

// Attention pooling encoder: input projection, pre-norm self-attention +
// feed-forward blocks with residuals (no positional encoding, so the
// embedding is insensitive to frame order/multiplicity), mean over time,
// output projection. Parameters live in the owning model's store under
// `prefix`, so each of M1/M2 trains its own copy.
struct SpeakerEncoder {
  SpeakerEncoderConfig cfg;
  ad::Var in_w, in_b;
  struct Block {
    nn::NormParams ln1, ln2;
    nn::AttentionParams attn;
    nn::GatedFeedForwardParams ff;
  };
  std::vector<Block> blocks;
  ad::Var out_w, out_b;

  void build(nn::ParamStore& store, const std::string& prefix, Rng& rng) {
    cfg.validate();
    in_w = store.add(prefix + ".in.w", nn::init_weight(cfg.n_mels, cfg.d_model, rng));
    in_b = store.add(prefix + ".in.b", Tensor(1, cfg.d_model));
    blocks.clear();
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
      std::string bp = prefix + ".block" + std::to_string(l);
      Block b;
      b.ln1 = nn::make_norm(store, bp + ".ln1", cfg.d_model);
      b.attn = nn::make_attention(store, bp + ".attn", cfg.d_model, rng);
      b.ln2 = nn::make_norm(store, bp + ".ln2", cfg.d_model);
      b.ff = nn::make_gated_ff(store, bp + ".ff", cfg.d_model, 4 * cfg.d_model, rng);
      blocks.push_back(b);
    }
    out_w = store.add(prefix + ".out.w", nn::init_weight(cfg.d_model, cfg.out_dim, rng));
    out_b = store.add(prefix + ".out.b", Tensor(1, cfg.out_dim));
  }

  // 1 x out_dim
  ad::Var embed_clip_var(const Tensor& mel_frames) const {
    require(mel_frames.rows >= 1, Err::empty_input, "embed_clip: empty clip");
    require(mel_frames.cols == cfg.n_mels, Err::shape_mismatch, "embed_clip: mel width mismatch");
    ad::Var h = nn::linear(ad::constant(mel_frames), in_w, in_b);
    for (const auto& b : blocks) {
      h = ad::add(h, nn::self_attention(nn::norm(h, b.ln1), b.attn, cfg.n_heads, /*causal=*/false));
      h = ad::add(h, nn::gated_ff(nn::norm(h, b.ln2), b.ff));
    }
    return nn::linear(ad::mean_rows(h), out_w, out_b);
  }

  // Arithmetic mean of per-clip embeddings, summed in the given order.
  ad::Var embed_reference_set_var(const std::vector<Tensor>& clips) const {
    require(!clips.empty(), Err::empty_input, "embed_reference_set: no clips");
    ad::Var acc = embed_clip_var(clips[0]);
    for (size_t i = 1; i < clips.size(); ++i) acc = ad::add(acc, embed_clip_var(clips[i]));
    return ad::scale(acc, 1.0 / static_cast<double>(clips.size()));
  }
};

inline SpeakerEmbedding embed_clip(const MelSpectrogram& m, const SpeakerEncoder& enc) {
  ad::NoGradGuard ng;
  ad::Var v = enc.embed_clip_var(m.frames);
  return v->val.v;
}

inline SpeakerEmbedding embed_reference_set(const std::vector<MelSpectrogram>& clips,
                                            const SpeakerEncoder& enc) {
  require(!clips.empty(), Err::empty_input, "embed_reference_set: no clips");
  ad::NoGradGuard ng;
  std::vector<Tensor> frames;
  frames.reserve(clips.size());
  for (const auto& c : clips) frames.push_back(c.frames);
  ad::Var v = enc.embed_reference_set_var(frames);
  return v->val.v;
}

// Up to 3 same-speaker reference clips for a target. "Nearest" is temporal
// proximity within the same source recording; clips from other recordings
// rank by duration difference after all same-source candidates.
inline std::vector<ClipRecord> select_references(const ClipRecord& target, const Manifest& manifest,
                                                 size_t max_refs = 3) {
  struct Cand {
    double key;
    int same_source;  // 0 sorts before 1
    size_t idx;
  };
  std::vector<Cand> cands;
  for (size_t i = 0; i < manifest.size(); ++i) {
    const ClipRecord& r = manifest[i];
    if (r.speaker_id != target.speaker_id) continue;
    if (r.audio_path == target.audio_path && r.offset_s == target.offset_s &&
        r.duration_s == target.duration_s)
      continue;  // exclude the target itself
    bool same_src = !r.source_id.empty() && r.source_id == target.source_id;
    double key = same_src ? std::abs(r.offset_s - target.offset_s)
                          : std::abs(r.duration_s - target.duration_s);
    cands.push_back({key, same_src ? 0 : 1, i});
  }
  require(!cands.empty(), Err::empty_input,
          "select_references: speaker has no other clips: " + target.speaker_id);
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.same_source != b.same_source) return a.same_source < b.same_source;
    if (a.key != b.key) return a.key < b.key;
    return a.idx < b.idx;
  });
  std::vector<ClipRecord> out;
  for (size_t i = 0; i < cands.size() && i < max_refs; ++i) out.push_back(manifest[cands[i].idx]);
  return out;
}

}  // namespace mahaflow
