#pragma once

#include <string>
#include <vector>

#include "mahaflow/nn.hpp"
#include "mahaflow/semantic.hpp"
#include "mahaflow/speaker.hpp"
#include "mahaflow/text.hpp"

namespace mahaflow {

// =====================================================================
//  M1: decoder-only LM over [LANG][SPK][text tokens][semantic tokens]
//  with rotary attention and separate text/semantic classification heads.
// =====================================================================

struct M1Config {
  int64_t n_layers = 4;
  int64_t d_model = 256;
  int64_t n_heads = 8;
  int64_t ff_mult = 4;
  int64_t char_vocab_size = 0;  // from the built vocab
  int64_t sem_vocab_size = 0;   // K + 1 (SEM_STOP included)
  int64_t n_languages = 21;
  int64_t max_seq_len = 1024;
  double text_loss_weight = 0.1;
  double sem_loss_weight = 1.0;
  double rope_base = 10000.0;
  SpeakerEncoderConfig spk;

  void validate() const {
    require(n_layers >= 1 && d_model >= 1 && ff_mult >= 1, Err::bad_argument,
            "m1: dims must be positive");
    require(d_model % n_heads == 0, Err::bad_argument, "m1: d_model must be divisible by n_heads");
    require((d_model / n_heads) % 2 == 0, Err::bad_argument, "m1: head dim must be even for rope");
    require(char_vocab_size >= 1 && sem_vocab_size >= 2, Err::bad_argument, "m1: bad vocab sizes");
    require(n_languages >= 1 && max_seq_len >= 4, Err::bad_argument, "m1: bad table sizes");
    require(text_loss_weight >= 0.0 && sem_loss_weight >= 0.0, Err::bad_argument,
            "m1: loss weights must be nonnegative");
    spk.validate();
  }
};

// Layout: [LANG slot][SPK slot][text ids][sem ids]; sem stream ends with
// SEM_STOP. The two leading slots are conditioning only and are excluded
// from both losses.
struct M1Sequence {
  int64_t lang_id = 0;
  SpeakerEmbedding speaker_embedding;
  std::vector<int64_t> text_ids;  // TEXT_START ... TEXT_END
  std::vector<int64_t> sem_ids;   // ... SEM_STOP

  int64_t length() const {
    return 2 + static_cast<int64_t>(text_ids.size()) + static_cast<int64_t>(sem_ids.size());
  }
};

struct SamplingConfig {
  double temperature = 0.8;
  int64_t top_k = 50;
  int64_t max_new_tokens = 512;
  uint64_t seed = 0;
  bool greedy = false;  // argmax decoding, ignores temperature/top_k

  void validate() const {
    require(temperature > 0.0, Err::bad_argument, "sampling: temperature must be positive");
    require(top_k >= 1, Err::bad_argument, "sampling: top_k must be >= 1");
    require(max_new_tokens >= 1, Err::bad_argument, "sampling: max_new_tokens must be >= 1");
  }
};

struct M1Model {
  M1Config cfg;
  nn::ParamStore store;
  SpeakerEncoder spk_enc;
  ad::Var char_emb, sem_emb, lang_emb, spk_w, spk_b;
  struct Block {
    nn::NormParams ln1, ln2;
    nn::AttentionParams attn;
    nn::GatedFeedForwardParams ff;
  };
  std::vector<Block> blocks;
  nn::NormParams final_ln;
  ad::Var text_head_w, text_head_b, sem_head_w, sem_head_b;
};

inline M1Model build_m1(const M1Config& cfg, uint64_t seed) {
  cfg.validate();
  M1Model m;
  m.cfg = cfg;
  Rng rng(seed);
  auto& s = m.store;
  const int64_t d = cfg.d_model;
  m.char_emb = s.add("m1.char_emb", nn::init_weight(cfg.char_vocab_size, d, rng));
  m.sem_emb = s.add("m1.sem_emb", nn::init_weight(cfg.sem_vocab_size, d, rng));
  m.lang_emb = s.add("m1.lang_emb", nn::init_weight(cfg.n_languages, d, rng));
  m.spk_w = s.add("m1.spk_proj.w", nn::init_weight(cfg.spk.out_dim, d, rng));
  m.spk_b = s.add("m1.spk_proj.b", Tensor(1, d));
  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    std::string bp = "m1.block" + std::to_string(l);
    M1Model::Block b;
    b.ln1 = nn::make_norm(s, bp + ".ln1", d);
    b.attn = nn::make_attention(s, bp + ".attn", d, rng);
    b.ln2 = nn::make_norm(s, bp + ".ln2", d);
    b.ff = nn::make_gated_ff(s, bp + ".ff", d, cfg.ff_mult * d, rng);
    m.blocks.push_back(b);
  }
  m.final_ln = nn::make_norm(s, "m1.final_ln", d);
  m.text_head_w = s.add("m1.text_head.w", nn::init_weight(d, cfg.char_vocab_size, rng));
  m.text_head_b = s.add("m1.text_head.b", Tensor(1, cfg.char_vocab_size));
  m.sem_head_w = s.add("m1.sem_head.w", nn::init_weight(d, cfg.sem_vocab_size, rng));
  m.sem_head_b = s.add("m1.sem_head.b", Tensor(1, cfg.sem_vocab_size));
  m.spk_enc.cfg = cfg.spk;
  m.spk_enc.build(s, "m1.spk_enc", rng);
  return m;
}

namespace detail {

// Causal trunk over the concatenated sequence rows.
inline ad::Var m1_trunk(const M1Model& m, const std::vector<ad::Var>& row_parts) {
  ad::Var h = ad::concat_rows(row_parts);
  for (const auto& b : m.blocks) {
    h = ad::add(h, nn::self_attention(nn::norm(h, b.ln1), b.attn, m.cfg.n_heads,
                                      /*causal=*/true, m.cfg.rope_base));
    h = ad::add(h, nn::gated_ff(nn::norm(h, b.ln2), b.ff));
  }
  return nn::norm(h, m.final_ln);
}

inline void m1_check_ids(const M1Model& m, const std::vector<int64_t>& text_ids,
                         const std::vector<int64_t>& sem_ids) {
  require(text_ids.size() >= 2, Err::bad_argument, "m1: text stream needs START/END");
  for (int64_t id : text_ids)
    require(id >= 0 && id < m.cfg.char_vocab_size, Err::id_out_of_range, "m1: text id out of range");
  for (int64_t id : sem_ids)
    require(id >= 0 && id < m.cfg.sem_vocab_size, Err::id_out_of_range, "m1: sem id out of range");
}

struct M1LossVars {
  ad::Var text_logits, sem_logits;        // (Lt-1, Vt), (Ls, Vs)
  std::vector<int64_t> text_targets, sem_targets;
  ad::Var ce_text, ce_sem, total;
};

// Builds the differentiable loss for one sequence; `spk` is 1 x spk.out_dim
// (constant at inference, the speaker encoder's output during training).
inline M1LossVars m1_loss_vars(const M1Model& m, int64_t lang_id, const ad::Var& spk,
                               const std::vector<int64_t>& text_ids,
                               const std::vector<int64_t>& sem_ids) {
  m1_check_ids(m, text_ids, sem_ids);
  require(lang_id >= 0 && lang_id < m.cfg.n_languages, Err::id_out_of_range, "m1: bad lang id");
  require(!sem_ids.empty(), Err::bad_argument, "m1: empty semantic stream");
  const int64_t Lt = static_cast<int64_t>(text_ids.size());
  const int64_t Ls = static_cast<int64_t>(sem_ids.size());
  require(2 + Lt + Ls <= m.cfg.max_seq_len, Err::overlength_sequence, "m1: sequence too long");

  std::vector<ad::Var> parts{ad::rows(m.lang_emb, {lang_id}),
                             nn::linear(spk, m.spk_w, m.spk_b),
                             ad::rows(m.char_emb, text_ids), ad::rows(m.sem_emb, sem_ids)};
  ad::Var trunk = m1_trunk(m, parts);

  // next-token convention: row p predicts the token at p+1; the final text
  // row (TEXT_END) is the segment boundary and predicts sem_ids[0] with the
  // semantic head; LANG/SPK rows predict nothing.
  std::vector<int64_t> text_rows, sem_rows;
  for (int64_t i = 0; i + 1 < Lt; ++i) text_rows.push_back(2 + i);
  for (int64_t j = 0; j < Ls; ++j) sem_rows.push_back(2 + Lt - 1 + j);

  M1LossVars out;
  out.text_targets.assign(text_ids.begin() + 1, text_ids.end());
  out.sem_targets = sem_ids;
  out.text_logits = nn::linear(ad::rows(trunk, text_rows), m.text_head_w, m.text_head_b);
  out.sem_logits = nn::linear(ad::rows(trunk, sem_rows), m.sem_head_w, m.sem_head_b);
  out.ce_text = ad::cross_entropy_mean(out.text_logits, out.text_targets);
  out.ce_sem = ad::cross_entropy_mean(out.sem_logits, out.sem_targets);
  out.total = ad::add(ad::scale(out.ce_text, m.cfg.text_loss_weight),
                      ad::scale(out.ce_sem, m.cfg.sem_loss_weight));
  return out;
}

}  // namespace detail

struct M1Output {
  Tensor text_logits;  // (Lt-1) x char_vocab, rows predict text_ids[1..]
  Tensor sem_logits;   // Ls x sem_vocab, rows predict sem_ids[0..]
};

inline M1Output m1_forward(const M1Model& m, const M1Sequence& seq) {
  ad::NoGradGuard ng;
  require(static_cast<int64_t>(seq.speaker_embedding.size()) == m.cfg.spk.out_dim,
          Err::shape_mismatch, "m1_forward: speaker embedding size");
  ad::Var spk = ad::constant(Tensor::row(seq.speaker_embedding));
  auto vars = detail::m1_loss_vars(m, seq.lang_id, spk, seq.text_ids, seq.sem_ids);
  return M1Output{vars.text_logits->val, vars.sem_logits->val};
}

struct M1Loss {
  double ce_text = 0.0;
  double ce_sem = 0.0;
  double total = 0.0;
};

// Weighted sum of the per-stream mean cross-entropies.
inline M1Loss m1_loss(const M1Model& m, const M1Sequence& seq) {
  ad::NoGradGuard ng;
  ad::Var spk = ad::constant(Tensor::row(seq.speaker_embedding));
  auto vars = detail::m1_loss_vars(m, seq.lang_id, spk, seq.text_ids, seq.sem_ids);
  return M1Loss{vars.ce_text->val.v[0], vars.ce_sem->val.v[0], vars.total->val.v[0]};
}

// Combine independently computed per-stream CEs with the configured weights.
inline double m1_combine_loss(const M1Config& cfg, double ce_text, double ce_sem) {
  return cfg.text_loss_weight * ce_text + cfg.sem_loss_weight * ce_sem;
}

inline SemanticTokenSeq generate_semantic(const M1Model& m, int64_t lang_id,
                                          const SpeakerEmbedding& spk,
                                          const std::vector<int64_t>& text_ids,
                                          const SamplingConfig& sampling) {
  sampling.validate();
  detail::m1_check_ids(m, text_ids, {});
  require(lang_id >= 0 && lang_id < m.cfg.n_languages, Err::id_out_of_range, "m1: bad lang id");
  ad::NoGradGuard ng;
  Rng rng(sampling.seed);
  const int64_t stop_id = m.cfg.sem_vocab_size - 1;
  const int64_t Lt = static_cast<int64_t>(text_ids.size());

  SemanticTokenSeq out;
  out.stop_id = stop_id;
  std::vector<int64_t> sem_ids;
  ad::Var spk_var = ad::constant(Tensor::row(spk));
  for (int64_t step = 0; step < sampling.max_new_tokens; ++step) {
    require(2 + Lt + static_cast<int64_t>(sem_ids.size()) + 1 <= m.cfg.max_seq_len,
            Err::overlength_sequence, "generate_semantic: context overflow");
    std::vector<ad::Var> parts{ad::rows(m.lang_emb, {lang_id}),
                               nn::linear(spk_var, m.spk_w, m.spk_b),
                               ad::rows(m.char_emb, text_ids)};
    if (!sem_ids.empty()) parts.push_back(ad::rows(m.sem_emb, sem_ids));
    ad::Var trunk = detail::m1_trunk(m, parts);
    ad::Var last = ad::rows(trunk, {trunk->val.rows - 1});
    ad::Var logits = nn::linear(last, m.sem_head_w, m.sem_head_b);
    const std::vector<double>& z = logits->val.v;

    int64_t pick;
    if (sampling.greedy) {
      pick = 0;
      for (int64_t j = 1; j < static_cast<int64_t>(z.size()); ++j)
        if (z[static_cast<size_t>(j)] > z[static_cast<size_t>(pick)]) pick = j;
    } else {
      // temperature + top-k sampling
      std::vector<int64_t> order(z.size());
      for (size_t j = 0; j < z.size(); ++j) order[j] = static_cast<int64_t>(j);
      std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (z[static_cast<size_t>(a)] != z[static_cast<size_t>(b)]) return z[static_cast<size_t>(a)] > z[static_cast<size_t>(b)];
        return a < b;
      });
      size_t k = std::min(static_cast<size_t>(sampling.top_k), z.size());
      double mx = z[static_cast<size_t>(order[0])];
      std::vector<double> probs(k);
      double total = 0.0;
      for (size_t j = 0; j < k; ++j) {
        probs[j] = std::exp((z[static_cast<size_t>(order[j])] - mx) / sampling.temperature);
        total += probs[j];
      }
      double r = rng.uniform() * total;
      double acc = 0.0;
      pick = order[k - 1];
      for (size_t j = 0; j < k; ++j) {
        acc += probs[j];
        if (acc >= r) { pick = order[j]; break; }
      }
    }
    sem_ids.push_back(pick);
    if (pick == stop_id) break;
  }
  out.ids = std::move(sem_ids);
  return out;
}

}  // namespace mahaflow
