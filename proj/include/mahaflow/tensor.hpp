#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

#include "mahaflow/common.hpp"

namespace mahaflow {

// Dense row-major 2-D tensor of doubles. Vectors are kept as 1xN rows and
// scalars as 1x1 so every op can assume two dimensions.
struct Tensor {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0.0) {}

  static Tensor zeros(int64_t r, int64_t c) { return Tensor(r, c); }
  static Tensor full(int64_t r, int64_t c, double x) {
    Tensor t(r, c);
    std::fill(t.v.begin(), t.v.end(), x);
    return t;
  }
  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v[0] = x;
    return t;
  }
  static Tensor row(const std::vector<double>& xs) {
    Tensor t(1, static_cast<int64_t>(xs.size()));
    t.v = xs;
    return t;
  }
  static Tensor randn(int64_t r, int64_t c, Rng& rng, double std_dev = 1.0) {
    Tensor t(r, c);
    for (double& x : t.v) x = rng.normal() * std_dev;
    return t;
  }

  int64_t numel() const { return rows * cols; }
  double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
  double* ptr(int64_t r = 0) { return v.data() + r * cols; }
  const double* ptr(int64_t r = 0) const { return v.data() + r * cols; }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
  bool finite() const { return all_finite(v); }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.rows, t.cols); }

// ---------------------------------------------------------------------
//  Matrix kernels. C += A*B variants, raw pointers, chosen loop orders
//  vectorize under -O3. All model math funnels through these.
// ---------------------------------------------------------------------

// C[m,n] += A[m,k] * B[k,n]
inline void matmul_nn_acc(const double* A, const double* B, double* C, int64_t m, int64_t k,
                          int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (int64_t p = 0; p < k; ++p) {
      double av = a[p];
      const double* b = B + p * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void matmul_nt_acc(const double* A, const double* B, double* C, int64_t m, int64_t k,
                          int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] += s;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
inline void matmul_tn_acc(const double* A, const double* B, double* C, int64_t m, int64_t k,
                          int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const double* a = A + p * m;
    const double* b = B + p * n;
    for (int64_t i = 0; i < m; ++i) {
      double av = a[i];
      double* c = C + i * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

inline Tensor matmul_nn(const Tensor& a, const Tensor& b) {
  require(a.cols == b.rows, Err::shape_mismatch, "matmul: inner dims differ");
  Tensor c(a.rows, b.cols);
  matmul_nn_acc(a.ptr(), b.ptr(), c.ptr(), a.rows, a.cols, b.cols);
  return c;
}

inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols == b.cols, Err::shape_mismatch, "matmul_nt: inner dims differ");
  Tensor c(a.rows, b.rows);
  matmul_nt_acc(a.ptr(), b.ptr(), c.ptr(), a.rows, a.cols, b.rows);
  return c;
}

}  // namespace mahaflow
