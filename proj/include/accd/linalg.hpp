#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "accd/core.hpp"

// Small dense helpers for instance construction and reference solutions.
// Row-major square matrices as vector<double>; sizes here are test-scale.

namespace accd {

struct DenseMat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  DenseMat() = default;
  DenseMat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
};

inline vec matvec(const DenseMat& m, const vec& x) {
  vec y(static_cast<std::size_t>(m.rows), 0.0);
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += m.at(i, j) * x[j];
    y[static_cast<std::size_t>(i)] = s;
  }
  return y;
}

inline vec matvec_t(const DenseMat& m, const vec& x) {
  vec y(static_cast<std::size_t>(m.cols), 0.0);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) y[static_cast<std::size_t>(j)] += m.at(i, j) * x[i];
  return y;
}

inline double dot(const vec& a, const vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2_sq(const vec& a) { return dot(a, a); }

// In-place lower Cholesky of an SPD matrix; throws on non-positive pivots.
inline DenseMat cholesky(const DenseMat& s) {
  if (s.rows != s.cols) throw ContractError("cholesky: matrix must be square");
  const int n = s.rows;
  DenseMat l(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double sum = s.at(i, j);
      for (int k = 0; k < j; ++k) sum -= l.at(i, k) * l.at(j, k);
      if (i == j) {
        if (!(sum > 0.0)) throw ContractError("cholesky: matrix not positive definite");
        l.at(i, i) = std::sqrt(sum);
      } else {
        l.at(i, j) = sum / l.at(j, j);
      }
    }
  }
  return l;
}

inline vec chol_solve(const DenseMat& l, const vec& b) {
  const int n = l.rows;
  vec y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int k = 0; k < i; ++k) s -= l.at(i, k) * y[static_cast<std::size_t>(k)];
    y[static_cast<std::size_t>(i)] = s / l.at(i, i);
  }
  vec x(static_cast<std::size_t>(n));
  for (int i = n - 1; i >= 0; --i) {
    double s = y[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < n; ++k) s -= l.at(k, i) * x[static_cast<std::size_t>(k)];
    x[static_cast<std::size_t>(i)] = s / l.at(i, i);
  }
  return x;
}

inline vec spd_solve(const DenseMat& s, const vec& b) { return chol_solve(cholesky(s), b); }

// Largest eigenvalue of a symmetric matrix by power iteration.
inline double power_iteration(const DenseMat& s, int iters = 200) {
  const int n = s.rows;
  vec v(static_cast<std::size_t>(n), 1.0);
  v[0] = 1.5;  // break symmetry against alternating-sign eigenvectors
  double lam = 0.0;
  for (int t = 0; t < iters; ++t) {
    vec w = matvec(s, v);
    double nrm = std::sqrt(norm2_sq(w));
    if (nrm == 0.0) return 0.0;
    for (auto& e : w) e /= nrm;
    lam = dot(w, matvec(s, w));
    v = std::move(w);
  }
  return lam;
}

// Smallest eigenvalue of an SPD matrix via inverse power iteration.
inline double min_eigenvalue(const DenseMat& s, int iters = 200) {
  const DenseMat l = cholesky(s);
  const int n = s.rows;
  vec v(static_cast<std::size_t>(n), 1.0);
  for (int t = 0; t < iters; ++t) {
    vec w = chol_solve(l, v);
    double nrm = std::sqrt(norm2_sq(w));
    for (auto& e : w) e /= nrm;
    v = std::move(w);
  }
  return dot(v, matvec(s, v)) / norm2_sq(v);
}

}  // namespace accd
