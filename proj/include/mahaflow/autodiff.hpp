#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "mahaflow/tensor.hpp"

namespace mahaflow::ad {

// Tape-free reverse-mode autodiff over 2-D tensors. Every op returns a new
// node holding the forward value and a closure that pushes the node's grad
// into its parents. backward() walks one topological order of the graph
// reachable from the loss node. Parameter leaves persist across steps; op
// nodes are rebuilt every forward pass.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;  // allocated lazily, same shape as val
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> back;
  std::string name;  // set for parameters

  void ensure_grad() {
    if (grad.v.empty()) grad = zeros_like(val);
  }
};

inline thread_local int g_no_grad_depth = 0;

// Disables graph construction (values still computed). Used for sampling
// and generation loops where gradients are never needed.
struct NoGradGuard {
  NoGradGuard() { ++g_no_grad_depth; }
  ~NoGradGuard() { --g_no_grad_depth; }
};

inline bool grad_enabled() { return g_no_grad_depth == 0; }

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  return n;
}

inline Var param(Tensor t, std::string name = "") {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = true;
  n->name = std::move(name);
  return n;
}

inline Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> back) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  if (grad_enabled()) {
    for (const auto& p : parents)
      if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
      n->parents = std::move(parents);
      n->back = std::move(back);
    }
  }
  return n;
}

inline void backward(const Var& root) {
  require(root->val.numel() == 1, Err::bad_argument, "backward: root must be scalar");
  if (!root->requires_grad) return;

  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad.v[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->back) {
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->back(*n);
    }
  }
}

// =====================================================================
//  Ops
// =====================================================================

inline Var matmul(const Var& a, const Var& b) {
  Tensor c = matmul_nn(a->val, b->val);
  return make_op(std::move(c), {a, b}, [](Node& n) {
    const Tensor& g = n.grad;
    Node &a = *n.parents[0], &b = *n.parents[1];
    // dA += G * B^T ; dB += A^T * G
    if (a.requires_grad) matmul_nt_acc(g.ptr(), b.val.ptr(), a.grad.ptr(), g.rows, g.cols, a.val.cols);
    if (b.requires_grad) matmul_tn_acc(a.val.ptr(), g.ptr(), b.grad.ptr(), a.val.cols, a.val.rows, g.cols);
  });
}

// a[m,k] * b[n,k]^T
inline Var matmul_t(const Var& a, const Var& b) {
  Tensor c = matmul_nt(a->val, b->val);
  return make_op(std::move(c), {a, b}, [](Node& n) {
    const Tensor& g = n.grad;
    Node &a = *n.parents[0], &b = *n.parents[1];
    // C = A B^T : dA += G * B ; dB += G^T * A
    if (a.requires_grad) matmul_nn_acc(g.ptr(), b.val.ptr(), a.grad.ptr(), g.rows, g.cols, b.val.cols);
    if (b.requires_grad) matmul_tn_acc(g.ptr(), a.val.ptr(), b.grad.ptr(), g.cols, g.rows, a.val.cols);
  });
}

inline Var add(const Var& a, const Var& b) {
  require(a->val.same_shape(b->val), Err::shape_mismatch, "add: shape mismatch");
  Tensor c = a->val;
  for (size_t i = 0; i < c.v.size(); ++i) c.v[i] += b->val.v[i];
  return make_op(std::move(c), {a, b}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *n.parents[k];
      if (!p.requires_grad) continue;
      for (size_t i = 0; i < n.grad.v.size(); ++i) p.grad.v[i] += n.grad.v[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  require(a->val.same_shape(b->val), Err::shape_mismatch, "sub: shape mismatch");
  Tensor c = a->val;
  for (size_t i = 0; i < c.v.size(); ++i) c.v[i] -= b->val.v[i];
  return make_op(std::move(c), {a, b}, [](Node& n) {
    Node &a = *n.parents[0], &b = *n.parents[1];
    if (a.requires_grad)
      for (size_t i = 0; i < n.grad.v.size(); ++i) a.grad.v[i] += n.grad.v[i];
    if (b.requires_grad)
      for (size_t i = 0; i < n.grad.v.size(); ++i) b.grad.v[i] -= n.grad.v[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  require(a->val.same_shape(b->val), Err::shape_mismatch, "mul: shape mismatch");
  Tensor c = a->val;
  for (size_t i = 0; i < c.v.size(); ++i) c.v[i] *= b->val.v[i];
  return make_op(std::move(c), {a, b}, [](Node& n) {
    Node &a = *n.parents[0], &b = *n.parents[1];
    if (a.requires_grad)
      for (size_t i = 0; i < n.grad.v.size(); ++i) a.grad.v[i] += n.grad.v[i] * b.val.v[i];
    if (b.requires_grad)
      for (size_t i = 0; i < n.grad.v.size(); ++i) b.grad.v[i] += n.grad.v[i] * a.val.v[i];
  });
}

inline Var scale(const Var& a, double s) {
  Tensor c = a->val;
  for (double& x : c.v) x *= s;
  return make_op(std::move(c), {a}, [s](Node& n) {
    Node& a = *n.parents[0];
    for (size_t i = 0; i < n.grad.v.size(); ++i) a.grad.v[i] += s * n.grad.v[i];
  });
}

// x[m,n] + v[1,n] broadcast over rows
inline Var add_rowvec(const Var& x, const Var& v) {
  require(v->val.rows == 1 && v->val.cols == x->val.cols, Err::shape_mismatch, "add_rowvec");
  Tensor c = x->val;
  for (int64_t i = 0; i < c.rows; ++i)
    for (int64_t j = 0; j < c.cols; ++j) c.at(i, j) += v->val.v[static_cast<size_t>(j)];
  return make_op(std::move(c), {x, v}, [](Node& n) {
    Node &x = *n.parents[0], &v = *n.parents[1];
    if (x.requires_grad)
      for (size_t i = 0; i < n.grad.v.size(); ++i) x.grad.v[i] += n.grad.v[i];
    if (v.requires_grad)
      for (int64_t i = 0; i < n.grad.rows; ++i)
        for (int64_t j = 0; j < n.grad.cols; ++j) v.grad.v[static_cast<size_t>(j)] += n.grad.at(i, j);
  });
}

inline Var mean_rows(const Var& x) {
  Tensor c(1, x->val.cols);
  for (int64_t i = 0; i < x->val.rows; ++i)
    for (int64_t j = 0; j < x->val.cols; ++j) c.v[static_cast<size_t>(j)] += x->val.at(i, j);
  double inv = 1.0 / static_cast<double>(x->val.rows);
  for (double& y : c.v) y *= inv;
  return make_op(std::move(c), {x}, [inv](Node& n) {
    Node& x = *n.parents[0];
    for (int64_t i = 0; i < x.val.rows; ++i)
      for (int64_t j = 0; j < x.val.cols; ++j) x.grad.at(i, j) += inv * n.grad.v[static_cast<size_t>(j)];
  });
}

inline Var sum_all(const Var& x) {
  double s = 0.0;
  for (double y : x->val.v) s += y;
  return make_op(Tensor::scalar(s), {x}, [](Node& n) {
    Node& x = *n.parents[0];
    double g = n.grad.v[0];
    for (double& gx : x.grad.v) gx += g;
  });
}

inline Var mean_all(const Var& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x->val.numel())); }

inline Var silu(const Var& x) {
  Tensor c = x->val;
  for (double& y : c.v) {
    double s = 1.0 / (1.0 + std::exp(-y));
    y = y * s;
  }
  return make_op(std::move(c), {x}, [](Node& n) {
    Node& x = *n.parents[0];
    for (size_t i = 0; i < n.grad.v.size(); ++i) {
      double v = x.val.v[i];
      double s = 1.0 / (1.0 + std::exp(-v));
      x.grad.v[i] += n.grad.v[i] * (s + v * s * (1.0 - s));
    }
  });
}

inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const Tensor& xv = x->val;
  require(gain->val.cols == xv.cols && bias->val.cols == xv.cols, Err::shape_mismatch, "layer_norm");
  Tensor out(xv.rows, xv.cols);
  Tensor xhat(xv.rows, xv.cols);
  std::vector<double> inv_std(static_cast<size_t>(xv.rows));
  for (int64_t i = 0; i < xv.rows; ++i) {
    double mu = 0.0;
    for (int64_t j = 0; j < xv.cols; ++j) mu += xv.at(i, j);
    mu /= static_cast<double>(xv.cols);
    double var = 0.0;
    for (int64_t j = 0; j < xv.cols; ++j) {
      double d = xv.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(xv.cols);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int64_t j = 0; j < xv.cols; ++j) {
      double h = (xv.at(i, j) - mu) * is;
      xhat.at(i, j) = h;
      out.at(i, j) = h * gain->val.v[static_cast<size_t>(j)] + bias->val.v[static_cast<size_t>(j)];
    }
  }
  return make_op(std::move(out), {x, gain, bias},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
    Node &x = *n.parents[0], &g = *n.parents[1], &b = *n.parents[2];
    int64_t R = n.grad.rows, C = n.grad.cols;
    double invC = 1.0 / static_cast<double>(C);
    for (int64_t i = 0; i < R; ++i) {
      double dot_gh = 0.0, sum_g = 0.0;
      for (int64_t j = 0; j < C; ++j) {
        double dy = n.grad.at(i, j) * g.val.v[static_cast<size_t>(j)];
        dot_gh += dy * xhat.at(i, j);
        sum_g += dy;
      }
      if (x.requires_grad) {
        double is = inv_std[static_cast<size_t>(i)];
        for (int64_t j = 0; j < C; ++j) {
          double dy = n.grad.at(i, j) * g.val.v[static_cast<size_t>(j)];
          x.grad.at(i, j) += is * (dy - invC * sum_g - xhat.at(i, j) * invC * dot_gh);
        }
      }
      if (g.requires_grad)
        for (int64_t j = 0; j < C; ++j) g.grad.v[static_cast<size_t>(j)] += n.grad.at(i, j) * xhat.at(i, j);
      if (b.requires_grad)
        for (int64_t j = 0; j < C; ++j) b.grad.v[static_cast<size_t>(j)] += n.grad.at(i, j);
    }
  });
}

// Row softmax; with causal=true entries j > i are masked out (rows==cols).
inline Var softmax_rows(const Var& x, bool causal = false) {
  const Tensor& xv = x->val;
  if (causal) require(xv.rows == xv.cols, Err::shape_mismatch, "causal softmax needs square scores");
  Tensor p(xv.rows, xv.cols);
  for (int64_t i = 0; i < xv.rows; ++i) {
    int64_t lim = causal ? i + 1 : xv.cols;
    double mx = -1e300;
    for (int64_t j = 0; j < lim; ++j) mx = std::max(mx, xv.at(i, j));
    double z = 0.0;
    for (int64_t j = 0; j < lim; ++j) {
      double e = std::exp(xv.at(i, j) - mx);
      p.at(i, j) = e;
      z += e;
    }
    for (int64_t j = 0; j < lim; ++j) p.at(i, j) /= z;
    // masked tail stays exactly zero
  }
  return make_op(std::move(p), {x}, [](Node& n) {
    Node& x = *n.parents[0];
    for (int64_t i = 0; i < n.val.rows; ++i) {
      double dot = 0.0;
      for (int64_t j = 0; j < n.val.cols; ++j) dot += n.grad.at(i, j) * n.val.at(i, j);
      for (int64_t j = 0; j < n.val.cols; ++j)
        x.grad.at(i, j) += n.val.at(i, j) * (n.grad.at(i, j) - dot);
    }
  });
}

// Gather rows of a table/activation: out[r] = x[idx[r]].
inline Var rows(const Var& x, std::vector<int64_t> idx) {
  Tensor c(static_cast<int64_t>(idx.size()), x->val.cols);
  for (size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] >= 0 && idx[r] < x->val.rows, Err::id_out_of_range, "rows: index out of range");
    std::memcpy(c.ptr(static_cast<int64_t>(r)), x->val.ptr(idx[r]), sizeof(double) * static_cast<size_t>(x->val.cols));
  }
  return make_op(std::move(c), {x}, [idx = std::move(idx)](Node& n) {
    Node& x = *n.parents[0];
    for (size_t r = 0; r < idx.size(); ++r) {
      const double* g = n.grad.ptr(static_cast<int64_t>(r));
      double* d = x.grad.ptr(idx[r]);
      for (int64_t j = 0; j < n.grad.cols; ++j) d[j] += g[j];
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), Err::empty_input, "concat_rows: no parts");
  int64_t rows_total = 0, cols = parts[0]->val.cols;
  for (const auto& p : parts) {
    require(p->val.cols == cols, Err::shape_mismatch, "concat_rows: col mismatch");
    rows_total += p->val.rows;
  }
  Tensor c(rows_total, cols);
  int64_t r = 0;
  for (const auto& p : parts) {
    std::memcpy(c.ptr(r), p->val.ptr(), sizeof(double) * static_cast<size_t>(p->val.numel()));
    r += p->val.rows;
  }
  return make_op(std::move(c), parts, [](Node& n) {
    int64_t r = 0;
    for (auto& pv : n.parents) {
      Node& p = *pv;
      if (p.requires_grad)
        for (int64_t i = 0; i < p.val.rows; ++i)
          for (int64_t j = 0; j < p.val.cols; ++j) p.grad.at(i, j) += n.grad.at(r + i, j);
      r += p.val.rows;
    }
  });
}

inline Var concat_cols(const Var& a, const Var& b) {
  require(a->val.rows == b->val.rows, Err::shape_mismatch, "concat_cols: row mismatch");
  Tensor c(a->val.rows, a->val.cols + b->val.cols);
  for (int64_t i = 0; i < c.rows; ++i) {
    std::memcpy(c.ptr(i), a->val.ptr(i), sizeof(double) * static_cast<size_t>(a->val.cols));
    std::memcpy(c.ptr(i) + a->val.cols, b->val.ptr(i), sizeof(double) * static_cast<size_t>(b->val.cols));
  }
  return make_op(std::move(c), {a, b}, [](Node& n) {
    Node &a = *n.parents[0], &b = *n.parents[1];
    for (int64_t i = 0; i < n.grad.rows; ++i) {
      if (a.requires_grad)
        for (int64_t j = 0; j < a.val.cols; ++j) a.grad.at(i, j) += n.grad.at(i, j);
      if (b.requires_grad)
        for (int64_t j = 0; j < b.val.cols; ++j) b.grad.at(i, j) += n.grad.at(i, a.val.cols + j);
    }
  });
}

inline Var slice_cols(const Var& x, int64_t start, int64_t len) {
  require(start >= 0 && start + len <= x->val.cols, Err::shape_mismatch, "slice_cols");
  Tensor c(x->val.rows, len);
  for (int64_t i = 0; i < c.rows; ++i)
    std::memcpy(c.ptr(i), x->val.ptr(i) + start, sizeof(double) * static_cast<size_t>(len));
  return make_op(std::move(c), {x}, [start](Node& n) {
    Node& x = *n.parents[0];
    for (int64_t i = 0; i < n.grad.rows; ++i)
      for (int64_t j = 0; j < n.grad.cols; ++j) x.grad.at(i, start + j) += n.grad.at(i, j);
  });
}

// Rotary position embedding over per-head pairs; row index is the position.
// Pair i of a head rotates by angle pos * base^(-2i/head_dim).
inline Var rope(const Var& x, int64_t n_heads, double base) {
  const Tensor& xv = x->val;
  require(xv.cols % n_heads == 0, Err::bad_argument, "rope: cols not divisible by heads");
  int64_t dh = xv.cols / n_heads;
  require(dh % 2 == 0, Err::bad_argument, "rope: head dim must be even");
  std::vector<double> freqs(static_cast<size_t>(dh / 2));
  for (int64_t i = 0; i < dh / 2; ++i)
    freqs[static_cast<size_t>(i)] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
  Tensor c(xv.rows, xv.cols);
  for (int64_t t = 0; t < xv.rows; ++t) {
    for (int64_t h = 0; h < n_heads; ++h) {
      for (int64_t i = 0; i < dh / 2; ++i) {
        double ang = static_cast<double>(t) * freqs[static_cast<size_t>(i)];
        double cs = std::cos(ang), sn = std::sin(ang);
        int64_t ja = h * dh + 2 * i, jb = ja + 1;
        double a = xv.at(t, ja), b = xv.at(t, jb);
        c.at(t, ja) = a * cs - b * sn;
        c.at(t, jb) = a * sn + b * cs;
      }
    }
  }
  return make_op(std::move(c), {x}, [n_heads, dh, freqs = std::move(freqs)](Node& n) {
    Node& x = *n.parents[0];
    for (int64_t t = 0; t < n.grad.rows; ++t) {
      for (int64_t h = 0; h < n_heads; ++h) {
        for (int64_t i = 0; i < dh / 2; ++i) {
          double ang = static_cast<double>(t) * freqs[static_cast<size_t>(i)];
          double cs = std::cos(ang), sn = std::sin(ang);
          int64_t ja = h * dh + 2 * i, jb = ja + 1;
          double ga = n.grad.at(t, ja), gb = n.grad.at(t, jb);
          // transpose of the rotation
          x.grad.at(t, ja) += ga * cs + gb * sn;
          x.grad.at(t, jb) += -ga * sn + gb * cs;
        }
      }
    }
  });
}

// Depthwise 1-D convolution along rows (time), per-channel kernel w[k,C],
// zero padding, odd k.
inline Var dwconv1d(const Var& x, const Var& w) {
  const Tensor& xv = x->val;
  const Tensor& wv = w->val;
  require(wv.cols == xv.cols, Err::shape_mismatch, "dwconv1d: channel mismatch");
  require(wv.rows % 2 == 1, Err::bad_argument, "dwconv1d: kernel must be odd");
  int64_t T = xv.rows, C = xv.cols, K = wv.rows, P = (K - 1) / 2;
  Tensor c(T, C);
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t k = 0; k < K; ++k) {
      int64_t s = t + k - P;
      if (s < 0 || s >= T) continue;
      const double* xs = xv.ptr(s);
      const double* wk = wv.ptr(k);
      double* ct = c.ptr(t);
      for (int64_t j = 0; j < C; ++j) ct[j] += wk[j] * xs[j];
    }
  }
  return make_op(std::move(c), {x, w}, [P, K](Node& n) {
    Node &x = *n.parents[0], &w = *n.parents[1];
    int64_t T = n.grad.rows, C = n.grad.cols;
    for (int64_t t = 0; t < T; ++t) {
      const double* g = n.grad.ptr(t);
      for (int64_t k = 0; k < K; ++k) {
        int64_t s = t + k - P;
        if (s < 0 || s >= T) continue;
        if (x.requires_grad) {
          const double* wk = w.val.ptr(k);
          double* xg = x.grad.ptr(s);
          for (int64_t j = 0; j < C; ++j) xg[j] += wk[j] * g[j];
        }
        if (w.requires_grad) {
          const double* xs = x.val.ptr(s);
          double* wg = w.grad.ptr(k);
          for (int64_t j = 0; j < C; ++j) wg[j] += xs[j] * g[j];
        }
      }
    }
  });
}

// out[i,j] = table[idx[i*n+j], head]; used for bucketed attention bias.
inline Var gather_bias(const Var& table, const std::vector<int64_t>& idx, int64_t head, int64_t m,
                       int64_t n) {
  require(static_cast<int64_t>(idx.size()) == m * n, Err::shape_mismatch, "gather_bias: idx size");
  Tensor c(m, n);
  for (int64_t i = 0; i < m * n; ++i)
    c.v[static_cast<size_t>(i)] = table->val.at(idx[static_cast<size_t>(i)], head);
  return make_op(std::move(c), {table}, [idx, head](Node& nn) {
    Node& t = *nn.parents[0];
    for (size_t i = 0; i < idx.size(); ++i) t.grad.at(idx[i], head) += nn.grad.v[i];
  });
}

// Mean cross-entropy of row-wise logits against integer targets.
inline Var cross_entropy_mean(const Var& logits, const std::vector<int64_t>& targets) {
  const Tensor& lv = logits->val;
  require(static_cast<int64_t>(targets.size()) == lv.rows, Err::shape_mismatch, "cross_entropy: target count");
  Tensor probs(lv.rows, lv.cols);
  double loss = 0.0;
  for (int64_t i = 0; i < lv.rows; ++i) {
    require(targets[static_cast<size_t>(i)] >= 0 && targets[static_cast<size_t>(i)] < lv.cols,
            Err::id_out_of_range, "cross_entropy: target out of range");
    double mx = -1e300;
    for (int64_t j = 0; j < lv.cols; ++j) mx = std::max(mx, lv.at(i, j));
    double z = 0.0;
    for (int64_t j = 0; j < lv.cols; ++j) {
      double e = std::exp(lv.at(i, j) - mx);
      probs.at(i, j) = e;
      z += e;
    }
    for (int64_t j = 0; j < lv.cols; ++j) probs.at(i, j) /= z;
    loss -= std::log(probs.at(i, targets[static_cast<size_t>(i)]));
  }
  loss /= static_cast<double>(lv.rows);
  return make_op(Tensor::scalar(loss), {logits},
                 [probs = std::move(probs), targets](Node& n) {
    Node& l = *n.parents[0];
    double g = n.grad.v[0] / static_cast<double>(probs.rows);
    for (int64_t i = 0; i < probs.rows; ++i) {
      for (int64_t j = 0; j < probs.cols; ++j) {
        double p = probs.at(i, j) - (j == targets[static_cast<size_t>(i)] ? 1.0 : 0.0);
        l.grad.at(i, j) += g * p;
      }
    }
  });
}

// Sum of squared differences against a constant target.
inline Var sum_sq_diff(const Var& a, Tensor target) {
  require(a->val.same_shape(target), Err::shape_mismatch, "sum_sq_diff");
  double s = 0.0;
  for (size_t i = 0; i < target.v.size(); ++i) {
    double d = a->val.v[i] - target.v[i];
    s += d * d;
  }
  return make_op(Tensor::scalar(s), {a}, [target = std::move(target)](Node& n) {
    Node& a = *n.parents[0];
    double g = n.grad.v[0];
    for (size_t i = 0; i < target.v.size(); ++i)
      a.grad.v[i] += g * 2.0 * (a.val.v[i] - target.v[i]);
  });
}

inline Var mean_sq_diff(const Var& a, Tensor target) {
  double inv = 1.0 / static_cast<double>(target.numel());
  return scale(sum_sq_diff(a, std::move(target)), inv);
}

}  // namespace mahaflow::ad
