#pragma once

#include <string>
#include <vector>

#include "mahaflow/mel.hpp"
#include "mahaflow/nn.hpp"
#include "mahaflow/semantic.hpp"
#include "mahaflow/speaker.hpp"

namespace mahaflow {

// =====================================================================
//  Optimal-transport path primitives. The path is the straight line
//  (1-t) x0 + t x1 and its vector field is x1 - x0, independent of t.
// =====================================================================

inline Tensor ot_point(const Tensor& x0, const Tensor& x1, double t) {
  require(x0.same_shape(x1), Err::shape_mismatch, "ot_point: shape mismatch");
  require(t >= 0.0 && t <= 1.0, Err::bad_argument, "ot_point: t outside [0,1]");
  if (t == 0.0) return x0;
  if (t == 1.0) return x1;
  Tensor out(x0.rows, x0.cols);
  // x0 + t (x1 - x0): endpoints and the degenerate x0 == x1 path stay exact
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = x0.v[i] + t * (x1.v[i] - x0.v[i]);
  return out;
}

inline Tensor target_field(const Tensor& x0, const Tensor& x1) {
  require(x0.same_shape(x1), Err::shape_mismatch, "target_field: shape mismatch");
  Tensor out(x0.rows, x0.cols);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = x1.v[i] - x0.v[i];
  return out;
}

// One point on the noise->data path together with its regression target.
struct FlowPath {
  Tensor x0;
  Tensor x1;
  double t = 0.0;
  Tensor x_t;  // (1-t) x0 + t x1
  Tensor u;    // x1 - x0, independent of t
};

inline FlowPath make_flow_path(Tensor x0, Tensor x1, double t) {
  FlowPath p;
  p.x_t = ot_point(x0, x1, t);
  p.u = target_field(x0, x1);
  p.x0 = std::move(x0);
  p.x1 = std::move(x1);
  p.t = t;
  return p;
}

// Repeat each token id `factor` times to align the 25 Hz token stream with
// the 100 Hz mel frames. The terminal SEM_STOP must be removed first.
inline std::vector<int64_t> upsample_tokens(const SemanticTokenSeq& y, int64_t factor) {
  require(factor >= 1, Err::bad_argument, "upsample_tokens: factor must be >= 1");
  std::vector<int64_t> content = y.content_ids();
  require(!content.empty(), Err::empty_input, "upsample_tokens: no content tokens");
  std::vector<int64_t> out;
  out.reserve(content.size() * static_cast<size_t>(factor));
  for (int64_t id : content)
    for (int64_t r = 0; r < factor; ++r) out.push_back(id);
  return out;
}

// =====================================================================
//  Bucketed relative-position bias (symmetric): half the buckets are
//  exact small distances, the other half spread logarithmically up to
//  max_distance; anything farther lands in the last bucket, which is what
//  lets the model run on sequences much longer than it was trained on.
// =====================================================================

inline int64_t relpos_bucket(int64_t rel, int64_t n_buckets, int64_t max_distance) {
  int64_t d = std::llabs(rel);
  int64_t exact = n_buckets / 2;
  if (d < exact) return d;
  double logpos = static_cast<double>(exact) +
                  std::log(static_cast<double>(d) / static_cast<double>(exact)) /
                      std::log(static_cast<double>(max_distance) / static_cast<double>(exact)) *
                      static_cast<double>(n_buckets - exact);
  int64_t b = static_cast<int64_t>(logpos);
  return std::min(b, n_buckets - 1);
}

inline std::vector<int64_t> relpos_bucket_matrix(int64_t t_q, int64_t t_k, int64_t n_buckets,
                                                 int64_t max_distance) {
  require(t_q >= 1 && t_k >= 1, Err::bad_argument, "relpos: lengths must be >= 1");
  std::vector<int64_t> idx(static_cast<size_t>(t_q * t_k));
  for (int64_t i = 0; i < t_q; ++i)
    for (int64_t j = 0; j < t_k; ++j)
      idx[static_cast<size_t>(i * t_k + j)] = relpos_bucket(j - i, n_buckets, max_distance);
  return idx;
}

// T_q x T_k additive attention bias for one head from a learned
// [n_buckets x n_heads] table.
inline Tensor relpos_bias(int64_t t_q, int64_t t_k, const Tensor& table, int64_t head,
                          int64_t max_distance) {
  std::vector<int64_t> idx = relpos_bucket_matrix(t_q, t_k, table.rows, max_distance);
  Tensor out(t_q, t_k);
  for (int64_t i = 0; i < t_q * t_k; ++i)
    out.v[static_cast<size_t>(i)] = table.at(idx[static_cast<size_t>(i)], head);
  return out;
}

// =====================================================================
//  Flow model: v_t(x | y, ref)
// =====================================================================

struct FlowConfig {
  int64_t n_blocks = 4;
  int64_t d_model = 128;
  int64_t n_heads = 4;
  int64_t conv_kernel = 5;
  int64_t relpos_buckets = 32;
  int64_t relpos_max_distance = 128;
  int64_t token_upsample = 4;  // 25 Hz tokens -> 100 Hz mel frames
  int64_t time_embed_dim = 128;
  int64_t n_mels = 80;
  int64_t token_vocab = 64;  // codebook K; SEM_STOP never reaches the flow
  SpeakerEncoderConfig spk;

  void validate() const {
    require(n_blocks >= 1 && d_model >= 1 && time_embed_dim >= 2, Err::bad_argument,
            "flow: dims must be positive");
    require(d_model % n_heads == 0, Err::bad_argument, "flow: d_model must be divisible by heads");
    require(conv_kernel % 2 == 1, Err::bad_argument, "flow: conv kernel must be odd");
    require(relpos_buckets >= 4 && relpos_max_distance > relpos_buckets / 2, Err::bad_argument,
            "flow: bad relpos bucketing");
    require(token_upsample >= 1 && token_vocab >= 1 && n_mels >= 1, Err::bad_argument,
            "flow: bad table sizes");
    spk.validate();
  }
};

struct FlowModel {
  FlowConfig cfg;
  nn::ParamStore store;
  SpeakerEncoder spk_enc;
  ad::Var token_emb, in_w, in_b, time_w, time_b, spk_w, spk_b, relpos_table;
  struct Block {
    nn::NormParams ln1, ln2;
    nn::AttentionParams attn;
    ad::Var conv_dw, conv_pw, conv_pb;
  };
  std::vector<Block> blocks;
  nn::NormParams final_ln;
  ad::Var out_w, out_b;
};

inline FlowModel build_flow(const FlowConfig& cfg, uint64_t seed) {
  cfg.validate();
  FlowModel m;
  m.cfg = cfg;
  Rng rng(seed);
  auto& s = m.store;
  const int64_t d = cfg.d_model;
  m.token_emb = s.add("m2.token_emb", nn::init_weight(cfg.token_vocab, d, rng));
  m.in_w = s.add("m2.in_proj.w", nn::init_weight(cfg.n_mels + d, d, rng));
  m.in_b = s.add("m2.in_proj.b", Tensor(1, d));
  m.time_w = s.add("m2.time_proj.w", nn::init_weight(cfg.time_embed_dim, d, rng));
  m.time_b = s.add("m2.time_proj.b", Tensor(1, d));
  m.spk_w = s.add("m2.spk_proj.w", nn::init_weight(cfg.spk.out_dim, d, rng));
  m.spk_b = s.add("m2.spk_proj.b", Tensor(1, d));
  m.relpos_table = s.add("m2.relpos", nn::init_weight(cfg.relpos_buckets, cfg.n_heads, rng));
  for (int64_t l = 0; l < cfg.n_blocks; ++l) {
    std::string bp = "m2.block" + std::to_string(l);
    FlowModel::Block b;
    b.ln1 = nn::make_norm(s, bp + ".ln1", d);
    b.attn = nn::make_attention(s, bp + ".attn", d, rng);
    b.ln2 = nn::make_norm(s, bp + ".ln2", d);
    b.conv_dw = s.add(bp + ".conv.dw", nn::init_weight(cfg.conv_kernel, d, rng));
    b.conv_pw = s.add(bp + ".conv.pw", nn::init_weight(d, d, rng));
    b.conv_pb = s.add(bp + ".conv.pb", Tensor(1, d));
    m.blocks.push_back(b);
  }
  m.final_ln = nn::make_norm(s, "m2.final_ln", d);
  m.out_w = s.add("m2.out_proj.w", nn::init_weight(d, cfg.n_mels, rng));
  m.out_b = s.add("m2.out_proj.b", Tensor(1, cfg.n_mels));
  m.spk_enc.cfg = cfg.spk;
  m.spk_enc.build(s, "m2.spk_enc", rng);
  return m;
}

namespace detail {

inline void check_y_frames(const FlowModel& m, const std::vector<int64_t>& y_frames, int64_t t) {
  require(static_cast<int64_t>(y_frames.size()) == t, Err::shape_mismatch,
          "flow: y_frames length must match frame count");
  for (int64_t id : y_frames)
    require(id >= 0 && id < m.cfg.token_vocab, Err::id_out_of_range, "flow: token id out of range");
}

// Differentiable v_t((x_t | y, ref); alternating attention (with shared
// relative-position bias) and depthwise-separable convolution blocks,
// attention first, residuals around both.
inline ad::Var flow_forward_var(const FlowModel& m, const Tensor& x_t, double t,
                                const std::vector<int64_t>& y_frames, const ad::Var& spk) {
  require(x_t.cols == m.cfg.n_mels, Err::shape_mismatch, "flow: mel width mismatch");
  require(x_t.rows >= 1, Err::empty_input, "flow: empty input");
  require(t >= 0.0 && t <= 1.0, Err::bad_argument, "flow: t outside [0,1]");
  const int64_t T = x_t.rows;
  check_y_frames(m, y_frames, T);

  ad::Var tok = ad::rows(m.token_emb, y_frames);
  ad::Var h = nn::linear(ad::concat_cols(ad::constant(x_t), tok), m.in_w, m.in_b);
  ad::Var time_feat = ad::constant(nn::sinusoid_features(t, m.cfg.time_embed_dim));
  h = ad::add_rowvec(h, nn::linear(time_feat, m.time_w, m.time_b));
  h = ad::add_rowvec(h, nn::linear(spk, m.spk_w, m.spk_b));

  std::vector<int64_t> bucket_idx =
      relpos_bucket_matrix(T, T, m.cfg.relpos_buckets, m.cfg.relpos_max_distance);
  for (const auto& b : m.blocks) {
    std::vector<ad::Var> bias;
    bias.reserve(static_cast<size_t>(m.cfg.n_heads));
    for (int64_t hd = 0; hd < m.cfg.n_heads; ++hd)
      bias.push_back(ad::gather_bias(m.relpos_table, bucket_idx, hd, T, T));
    h = ad::add(h, nn::self_attention(nn::norm(h, b.ln1), b.attn, m.cfg.n_heads,
                                      /*causal=*/false, std::nullopt, &bias));
    ad::Var c = ad::dwconv1d(nn::norm(h, b.ln2), b.conv_dw);
    c = ad::add_rowvec(ad::matmul(ad::silu(c), b.conv_pw), b.conv_pb);
    h = ad::add(h, c);
  }
  return nn::linear(nn::norm(h, m.final_ln), m.out_w, m.out_b);
}

}  // namespace detail

inline Tensor flow_forward(const FlowModel& m, const Tensor& x_t, double t,
                           const std::vector<int64_t>& y_frames, const SpeakerEmbedding& spk) {
  ad::NoGradGuard ng;
  require(static_cast<int64_t>(spk.size()) == m.cfg.spk.out_dim, Err::shape_mismatch,
          "flow_forward: speaker embedding size");
  return detail::flow_forward_var(m, x_t, t, y_frames, ad::constant(Tensor::row(spk)))->val;
}

// =====================================================================
//  CFM training loss
// =====================================================================

// One training example: target mel frames plus frame-aligned token ids and
// either reference mels (speaker encoder trains jointly) or a fixed
// speaker embedding when ref_mels is empty.
struct M2Example {
  Tensor x1;                    // T x n_mels
  std::vector<int64_t> y_frames;
  std::vector<Tensor> ref_mels;
  SpeakerEmbedding spk;
};

struct CfmDraw {
  double t = 0.0;
  Tensor x0;
};

// Draw order is fixed (t first, then x0 row-major) so that a batch can be
// permuted together with its draws.
inline CfmDraw cfm_draw(Rng& rng, int64_t rows, int64_t cols) {
  CfmDraw d;
  d.t = rng.uniform();
  d.x0 = Tensor(rows, cols);
  for (auto& x : d.x0.v) x = rng.normal();
  return d;
}

namespace detail {

inline ad::Var example_spk_var(const FlowModel& m, const M2Example& ex) {
  if (!ex.ref_mels.empty()) return m.spk_enc.embed_reference_set_var(ex.ref_mels);
  require(static_cast<int64_t>(ex.spk.size()) == m.cfg.spk.out_dim, Err::shape_mismatch,
          "cfm: speaker embedding size");
  return ad::constant(Tensor::row(ex.spk));
}

// Mean over every element of every item: sum of squared errors / total
// element count.
inline ad::Var cfm_loss_var(const FlowModel& m, const std::vector<M2Example>& batch,
                            const std::vector<CfmDraw>& draws) {
  require(!batch.empty(), Err::empty_input, "cfm_loss: empty batch");
  require(draws.size() == batch.size(), Err::shape_mismatch, "cfm_loss: draw count");
  ad::Var total;
  int64_t total_elems = 0;
  for (size_t i = 0; i < batch.size(); ++i) {
    const M2Example& ex = batch[i];
    const CfmDraw& d = draws[i];
    require(d.x0.same_shape(ex.x1), Err::shape_mismatch, "cfm_loss: draw shape");
    Tensor x_t = ot_point(d.x0, ex.x1, d.t);
    Tensor u = target_field(d.x0, ex.x1);
    ad::Var v = flow_forward_var(m, x_t, d.t, ex.y_frames, example_spk_var(m, ex));
    ad::Var ssd = ad::sum_sq_diff(v, std::move(u));
    total = total ? ad::add(total, ssd) : ssd;
    total_elems += ex.x1.numel();
  }
  return ad::scale(total, 1.0 / static_cast<double>(total_elems));
}

}  // namespace detail

inline double cfm_loss_with_draws(const FlowModel& m, const std::vector<M2Example>& batch,
                                  const std::vector<CfmDraw>& draws) {
  ad::NoGradGuard ng;
  return detail::cfm_loss_var(m, batch, draws)->val.v[0];
}

// Per-item independent t ~ U[0,1] and x0 ~ N(0, I) from the caller's rng.
inline double cfm_loss(const FlowModel& m, const std::vector<M2Example>& batch, Rng& rng) {
  require(!batch.empty(), Err::empty_input, "cfm_loss: empty batch");
  std::vector<CfmDraw> draws;
  draws.reserve(batch.size());
  for (const auto& ex : batch) draws.push_back(cfm_draw(rng, ex.x1.rows, ex.x1.cols));
  return cfm_loss_with_draws(m, batch, draws);
}

// =====================================================================
//  Euler sampling: x <- x + (1/steps) v(x, k/steps) from x ~ N(0, I)
// =====================================================================

inline Tensor euler_sample_frames(const FlowModel& m, const std::vector<int64_t>& y_frames,
                                  const SpeakerEmbedding& spk, int64_t steps, Rng& rng) {
  require(steps >= 1, Err::bad_argument, "euler_sample: steps must be >= 1");
  ad::NoGradGuard ng;
  const int64_t T = static_cast<int64_t>(y_frames.size());
  Tensor x(T, m.cfg.n_mels);
  for (auto& v : x.v) v = rng.normal();
  ad::Var spk_var = ad::constant(Tensor::row(spk));
  double dt = 1.0 / static_cast<double>(steps);
  for (int64_t k = 0; k < steps; ++k) {
    double t = static_cast<double>(k) * dt;
    Tensor v = detail::flow_forward_var(m, x, t, y_frames, spk_var)->val;
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += dt * v.v[i];
  }
  return x;
}

// Sampled frames wrapped as a mel spectrogram; entries are clamped to the
// log floor so the result honors the mel invariants.
inline MelSpectrogram euler_sample(const FlowModel& m, const std::vector<int64_t>& y_frames,
                                   const SpeakerEmbedding& spk, int64_t steps, Rng& rng,
                                   const MelConfig& mel_cfg) {
  Tensor x = euler_sample_frames(m, y_frames, spk, steps, rng);
  double lf = std::log(mel_cfg.log_floor);
  for (auto& v : x.v) v = std::max(v, lf);
  MelSpectrogram out;
  out.frames = std::move(x);
  out.config = mel_cfg;
  return out;
}

}  // namespace mahaflow
