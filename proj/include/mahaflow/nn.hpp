#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mahaflow/autodiff.hpp"

namespace mahaflow::nn {

using ad::Var;

// Ordered, named parameter leaves. Order is the serialization order, so it
// must be construction-deterministic.
struct ParamStore {
  std::vector<Var> params;

  Var add(const std::string& name, Tensor init) {
    for (const auto& p : params)
      require(p->name != name, Err::bad_argument, "duplicate parameter name: " + name);
    Var v = ad::param(std::move(init), name);
    params.push_back(v);
    return v;
  }

  Var find(const std::string& name) const {
    for (const auto& p : params)
      if (p->name == name) return p;
    fail(Err::unknown_group, "no parameter named " + name);
  }

  void zero_grad() {
    for (auto& p : params) {
      p->ensure_grad();
      p->grad.zero();
    }
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : params) n += p->val.numel();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p->name);
    return out;
  }
};

// Initialization used by every model: scaled normal (std 0.02) for weights,
// zeros for biases, ones/zeros for norm gains/offsets.
inline Tensor init_weight(int64_t r, int64_t c, Rng& rng, double std_dev = 0.02) {
  return Tensor::randn(r, c, rng, std_dev);
}

inline Var linear(const Var& x, const Var& w, const Var& b) {
  return ad::add_rowvec(ad::matmul(x, w), b);
}

// Attention projections are bias-free (a key-side bias is invisible to the
// row-shift-invariant softmax, so it would train as dead weight).
struct AttentionParams {
  Var wq, wk, wv, wo, bo;
};

inline AttentionParams make_attention(ParamStore& store, const std::string& prefix, int64_t d,
                                      Rng& rng) {
  AttentionParams a;
  a.wq = store.add(prefix + ".wq", init_weight(d, d, rng));
  a.wk = store.add(prefix + ".wk", init_weight(d, d, rng));
  a.wv = store.add(prefix + ".wv", init_weight(d, d, rng));
  a.wo = store.add(prefix + ".wo", init_weight(d, d, rng));
  a.bo = store.add(prefix + ".bo", Tensor(1, d));
  return a;
}

// Multi-head self-attention. Optional rotary embedding on q/k and optional
// per-head additive bias matrices (relative-position bias).
inline Var self_attention(const Var& x, const AttentionParams& p, int64_t n_heads, bool causal,
                          std::optional<double> rope_base = std::nullopt,
                          const std::vector<Var>* head_bias = nullptr) {
  int64_t d = x->val.cols;
  int64_t dh = d / n_heads;
  Var q = ad::matmul(x, p.wq);
  Var k = ad::matmul(x, p.wk);
  Var v = ad::matmul(x, p.wv);
  if (rope_base) {
    q = ad::rope(q, n_heads, *rope_base);
    k = ad::rope(k, n_heads, *rope_base);
  }
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<size_t>(n_heads));
  for (int64_t h = 0; h < n_heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, dh);
    Var kh = ad::slice_cols(k, h * dh, dh);
    Var vh = ad::slice_cols(v, h * dh, dh);
    Var scores = ad::scale(ad::matmul_t(qh, kh), inv_sqrt);
    if (head_bias) scores = ad::add(scores, (*head_bias)[static_cast<size_t>(h)]);
    Var probs = ad::softmax_rows(scores, causal);
    outs.push_back(ad::matmul(probs, vh));
  }
  Var cat = outs[0];
  for (size_t h = 1; h < outs.size(); ++h) cat = ad::concat_cols(cat, outs[h]);
  return linear(cat, p.wo, p.bo);
}

struct GatedFeedForwardParams {
  Var w_in, b_in, w_gate, b_gate, w_out, b_out;
};

inline GatedFeedForwardParams make_gated_ff(ParamStore& store, const std::string& prefix,
                                            int64_t d, int64_t hidden, Rng& rng) {
  GatedFeedForwardParams f;
  f.w_in = store.add(prefix + ".w_in", init_weight(d, hidden, rng));
  f.b_in = store.add(prefix + ".b_in", Tensor(1, hidden));
  f.w_gate = store.add(prefix + ".w_gate", init_weight(d, hidden, rng));
  f.b_gate = store.add(prefix + ".b_gate", Tensor(1, hidden));
  f.w_out = store.add(prefix + ".w_out", init_weight(hidden, d, rng));
  f.b_out = store.add(prefix + ".b_out", Tensor(1, d));
  return f;
}

// silu(x W_in) * (x W_gate) -> W_out
inline Var gated_ff(const Var& x, const GatedFeedForwardParams& f) {
  Var a = ad::silu(linear(x, f.w_in, f.b_in));
  Var g = linear(x, f.w_gate, f.b_gate);
  return linear(ad::mul(a, g), f.w_out, f.b_out);
}

struct NormParams {
  Var gain, bias;
};

inline NormParams make_norm(ParamStore& store, const std::string& prefix, int64_t d) {
  NormParams n;
  n.gain = store.add(prefix + ".gain", Tensor::full(1, d, 1.0));
  n.bias = store.add(prefix + ".bias", Tensor(1, d));
  return n;
}

inline Var norm(const Var& x, const NormParams& n) { return ad::layer_norm(x, n.gain, n.bias); }

// Sinusoidal features for a scalar in [0,1]; the 1000x stretch keeps the
// low-frequency channels from collapsing to a constant over the unit range.
inline Tensor sinusoid_features(double t, int64_t dim) {
  Tensor f(1, dim);
  int64_t half = dim / 2;
  for (int64_t i = 0; i < half; ++i) {
    double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    double ang = t * 1000.0 * freq;
    f.v[static_cast<size_t>(i)] = std::sin(ang);
    f.v[static_cast<size_t>(half + i)] = std::cos(ang);
  }
  if (dim % 2 == 1) f.v[static_cast<size_t>(dim - 1)] = t;
  return f;
}

// Global-norm gradient clipping over a whole store; returns the pre-clip norm.
inline double clip_grad_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (auto& p : store.params) {
    p->ensure_grad();
    for (double g : p->grad.v) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto& p : store.params)
      for (double& g : p->grad.v) g *= s;
  }
  return norm;
}

}  // namespace mahaflow::nn
