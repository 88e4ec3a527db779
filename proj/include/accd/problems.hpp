#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "accd/core.hpp"
#include "accd/linalg.hpp"
#include "accd/rng.hpp"

// Concrete problem instances: dense quadratics (including the rank-one-plus-
// diagonal family with entries in [1,2] and the ill-conditioned chain), the
// entropy-regularized linear program with its two smooth duals and primal
// recovery, the least-norm projection dual, and the feasible-set guard.

namespace accd {

// f(x) = (1/2) <x, S x> - <b, x>, S symmetric positive definite.
struct QuadraticProblem {
  DenseMat s;
  vec b;
  double ridge_added = 0.0;
  double lambda_max_est = 0.0;
  double min_entry = 0.0, max_entry = 0.0;

  int dim() const { return s.rows; }

  double value(const vec& x) const {
    const int n = s.rows;
    double q = 0.0, lin = 0.0;
    for (int i = 0; i < n; ++i) {
      double row = 0.0;
      for (int j = 0; j < n; ++j) row += s.at(i, j) * x[static_cast<std::size_t>(j)];
      q += x[static_cast<std::size_t>(i)] * row;
      lin += b[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
    }
    return 0.5 * q - lin;
  }

  double partial(int i, const vec& x) const {
    if (i < 0 || i >= s.rows) throw ContractError("QuadraticProblem: coordinate out of range");
    double row = 0.0;
    for (int j = 0; j < s.cols; ++j) row += s.at(i, j) * x[static_cast<std::size_t>(j)];
    return row - b[static_cast<std::size_t>(i)];
  }

  double lip(int i) const { return s.at(i, i); }

  vec gradient(const vec& x) const {
    vec g = matvec(s, x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= b[i];
    return g;
  }

  // exact minimizer S x = b and its value
  std::pair<vec, double> solve_reference() const {
    vec xs = spd_solve(s, b);
    return {xs, value(xs)};
  }
};

// Dense symmetric instance with every entry in [1,2]: S = u u^T + diag(d)
// with u_i in [1, sqrt(2-gap)] and d_i in [d_lo, 2 - u_i^2].  This keeps
// S_ii <= 2 (so every coordinate constant is at most 2), makes S positive
// definite outright (smallest eigenvalue >= min d_i), and puts the largest
// eigenvalue at ||u||^2 >= n, the regime where coordinate methods beat
// full-gradient ones on arithmetic.  The right-hand side is S xhat for a
// uniform xhat in [-1,1]^n, so the minimizer is known.
inline QuadraticProblem make_example2(int n, std::uint64_t seed) {
  if (n < 2) throw ContractError("make_example2: n must be >= 2");
  Rng rng(seed);
  const double u_hi = std::sqrt(1.95);
  const double d_lo = 0.04;
  vec u(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    u[static_cast<std::size_t>(i)] = 1.0 + rng.unit() * (u_hi - 1.0);
    const double cap = 2.0 - u[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(i)];
    d[static_cast<std::size_t>(i)] = d_lo + rng.unit() * (cap - d_lo);
  }
  QuadraticProblem p;
  p.s = DenseMat(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      p.s.at(i, j) = u[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(j)] +
                     (i == j ? d[static_cast<std::size_t>(i)] : 0.0);
  vec xhat(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) xhat[static_cast<std::size_t>(i)] = rng.uniform(-1.0, 1.0);
  p.b = matvec(p.s, xhat);
  p.ridge_added = 0.0;
  p.lambda_max_est = power_iteration(p.s);
  p.min_entry = p.s.a[0];
  p.max_entry = p.s.a[0];
  for (double e : p.s.a) {
    p.min_entry = std::min(p.min_entry, e);
    p.max_entry = std::max(p.max_entry, e);
  }
  return p;
}

// f(x) = x_1^2 + sum_{k=1}^{n-1} (x_{k+1} - 2 x_k)^2, minimizer 0.  Level
// sets are extremely elongated, which is what makes it a stress test.
inline QuadraticProblem make_chain_quadratic(int n) {
  if (n < 2) throw ContractError("make_chain_quadratic: n must be >= 2");
  QuadraticProblem p;
  p.s = DenseMat(n, n);
  for (int j = 0; j < n; ++j) {
    p.s.at(j, j) = (j + 1 < n) ? 10.0 : 2.0;
    if (j > 0) p.s.at(j, j - 1) = -4.0;
    if (j + 1 < n) p.s.at(j, j + 1) = -4.0;
  }
  p.s.at(0, 0) = 10.0;
  p.b.assign(static_cast<std::size_t>(n), 0.0);
  p.lambda_max_est = power_iteration(p.s);
  p.min_entry = -4.0;
  p.max_entry = 10.0;
  return p;
}

// Diagonal quadratic with prescribed coordinate constants; the cheapest way
// to build strongly heterogeneous instances.
inline QuadraticProblem make_diagonal_quadratic(vec lips, vec b) {
  const int n = static_cast<int>(lips.size());
  if (n < 1 || b.size() != lips.size()) throw ContractError("make_diagonal_quadratic: sizes");
  QuadraticProblem p;
  p.s = DenseMat(n, n);
  for (int i = 0; i < n; ++i) {
    if (!(lips[static_cast<std::size_t>(i)] > 0.0))
      throw ContractError("make_diagonal_quadratic: diagonal must be positive");
    p.s.at(i, i) = lips[static_cast<std::size_t>(i)];
  }
  p.b = std::move(b);
  p.lambda_max_est = *std::max_element(lips.begin(), lips.end());
  p.min_entry = 0.0;
  p.max_entry = p.lambda_max_est;
  return p;
}

// ---- entropy-regularized linear program and its smooth duals ----

// min sum_i x_i ln x_i over the simplex intersected with A x = b.  The
// all-ones last row of A makes sum x_i = 1 a consequence of A x = b, and
// the right-hand side comes from an interior point xhat that is itself the
// exact optimizer (it is generated as softmax(A^T y0), so the KKT system
// pins it), giving tests an analytic reference.
struct EntropyLPInstance {
  DenseMat a;  // m x n, entries in [1,2], last row all ones
  vec b;
  vec x_hat;   // exact primal optimizer
  vec y_gen;   // the dual point that generated x_hat

  int n() const { return a.cols; }
  int m() const { return a.rows; }

  double primal_value(const vec& x) const {
    double s = 0.0;
    for (double xi : x) {
      if (xi < 0.0) throw ContractError("entropy value: negative component");
      if (xi > 0.0) s += xi * std::log(xi);
    }
    return s;
  }

  vec softmax_dual(const vec& y) const {
    vec t = matvec_t(a, y);
    const double tmax = *std::max_element(t.begin(), t.end());
    double z = 0.0;
    for (double& e : t) {
      e = std::exp(e - tmax);
      z += e;
    }
    for (double& e : t) e /= z;
    return t;
  }

  // recovery maps for the two duals
  vec recover_phi1(const vec& y) const { return softmax_dual(y); }
  vec recover_phi2(const vec& y) const {
    vec t = matvec_t(a, y);
    for (double& e : t) {
      if (e - 1.0 > 700.0)
        throw OracleError("recover_phi2: exponential overflow", -1, y, e - 1.0);
      e = std::exp(e - 1.0);
    }
    return t;
  }
};

inline EntropyLPInstance make_entropy_lp(int n, int m, std::uint64_t seed) {
  if (n < 2 || m < 1) throw ContractError("make_entropy_lp: need n >= 2, m >= 1");
  Rng rng(seed);
  EntropyLPInstance inst;
  inst.a = DenseMat(m, n);
  for (int r = 0; r + 1 < m; ++r)
    for (int j = 0; j < n; ++j) inst.a.at(r, j) = rng.uniform(1.0, 2.0);
  for (int j = 0; j < n; ++j) inst.a.at(m - 1, j) = 1.0;
  inst.y_gen.assign(static_cast<std::size_t>(m), 0.0);
  for (int r = 0; r < m; ++r) inst.y_gen[static_cast<std::size_t>(r)] = rng.uniform(-0.5, 0.5);
  inst.x_hat = inst.softmax_dual(inst.y_gen);
  inst.b = matvec(inst.a, inst.x_hat);
  return inst;
}

// phi1(y) = ln sum_j exp([A^T y]_j) - <y, b>; gradient A softmax(A^T y) - b.
// Every coordinate constant is bounded by max_ij A_ij^2 (the softmax
// covariance bound), which the *entries in [1,2]* regime caps at 4
// independently of m.
struct EntropyDual1 {
  const EntropyLPInstance* inst;
  double lip_bound;

  explicit EntropyDual1(const EntropyLPInstance& i) : inst(&i) {
    lip_bound = 0.0;
    for (double e : i.a.a) lip_bound = std::max(lip_bound, e * e);
  }

  int dim() const { return inst->m(); }

  double value(const vec& y) const {
    vec t = matvec_t(inst->a, y);
    const double tmax = *std::max_element(t.begin(), t.end());
    double z = 0.0;
    for (double e : t) z += std::exp(e - tmax);
    return tmax + std::log(z) - dot(y, inst->b);
  }

  double partial(int r, const vec& y) const {
    if (r < 0 || r >= dim()) throw ContractError("EntropyDual1: coordinate out of range");
    const vec x = inst->softmax_dual(y);
    double s = 0.0;
    for (int j = 0; j < inst->n(); ++j) s += inst->a.at(r, j) * x[static_cast<std::size_t>(j)];
    return s - inst->b[static_cast<std::size_t>(r)];
  }

  double lip(int) const { return lip_bound; }

  vec gradient(const vec& y) const {
    const vec x = inst->softmax_dual(y);
    vec g = matvec(inst->a, x);
    for (std::size_t r = 0; r < g.size(); ++r) g[r] -= inst->b[r];
    return g;
  }
};

// phi2(y) = sum_j exp([A^T y]_j - 1) - <y, b>.  Its curvature is not
// bounded, so runs must estimate constants by backtracking; lip() only
// seeds that search.
struct EntropyDual2 {
  const EntropyLPInstance* inst;

  explicit EntropyDual2(const EntropyLPInstance& i) : inst(&i) {}

  int dim() const { return inst->m(); }

  double value(const vec& y) const {
    const vec x = inst->recover_phi2(y);
    double s = 0.0;
    for (double e : x) s += e;
    return s - dot(y, inst->b);
  }

  double partial(int r, const vec& y) const {
    if (r < 0 || r >= dim()) throw ContractError("EntropyDual2: coordinate out of range");
    const vec x = inst->recover_phi2(y);
    double s = 0.0;
    for (int j = 0; j < inst->n(); ++j) s += inst->a.at(r, j) * x[static_cast<std::size_t>(j)];
    return s - inst->b[static_cast<std::size_t>(r)];
  }

  double lip(int) const { return 1.0; }  // backtracking seed, not a guarantee
};

// High-accuracy reference minimizer of phi1 by damped ridge Newton.  The
// all-ones row makes phi1 flat along e_m; the gradient is exactly
// orthogonal to that direction, and the tiny ridge keeps the Newton system
// solvable on the quotient.
struct PresolveResult {
  vec y;
  double phi_value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

inline PresolveResult newton_presolve_phi1(const EntropyLPInstance& inst, double grad_tol = 1e-13,
                                           int max_iter = 200) {
  const int m = inst.m();
  const int n = inst.n();
  EntropyDual1 dual(inst);
  PresolveResult out;
  out.y.assign(static_cast<std::size_t>(m), 0.0);
  double fy = dual.value(out.y);

  for (int it = 0; it < max_iter; ++it) {
    const vec x = inst.softmax_dual(out.y);
    vec g = matvec(inst.a, x);
    for (int r = 0; r < m; ++r) g[static_cast<std::size_t>(r)] -= inst.b[static_cast<std::size_t>(r)];
    const double gn = std::sqrt(norm2_sq(g));
    out.grad_norm = gn;
    out.iterations = it;
    if (gn <= grad_tol) break;

    // H = A diag(x) A^T - (A x)(A x)^T, ridge-shifted
    vec ax = matvec(inst.a, x);
    DenseMat h(m, m);
    for (int r = 0; r < m; ++r)
      for (int q = 0; q < m; ++q) {
        double s = 0.0;
        for (int j = 0; j < n; ++j)
          s += inst.a.at(r, j) * inst.a.at(q, j) * x[static_cast<std::size_t>(j)];
        h.at(r, q) = s - ax[static_cast<std::size_t>(r)] * ax[static_cast<std::size_t>(q)];
      }
    double tr = 0.0;
    for (int r = 0; r < m; ++r) tr += h.at(r, r);
    const double ridge = 1e-12 * (1.0 + tr);
    for (int r = 0; r < m; ++r) h.at(r, r) += ridge;

    vec step = spd_solve(h, g);
    double t = 1.0;
    for (int ls = 0; ls < 60; ++ls) {
      vec trial = out.y;
      for (int r = 0; r < m; ++r) trial[static_cast<std::size_t>(r)] -= t * step[static_cast<std::size_t>(r)];
      const double ft = dual.value(trial);
      if (ft <= fy) {
        out.y = std::move(trial);
        fy = ft;
        break;
      }
      t *= 0.5;
    }
  }
  out.phi_value = fy;
  return out;
}

// Computable optimality certificate for a recovered primal point.
struct Certificate {
  double feasibility = 0.0;  // ||A xbar - b||_2
  double gap = 0.0;          // f(xbar) + phi1(y); nonnegative for feasible xbar,
                             // and >= -theta_scale * feasibility in general
  double theta_scale = 0.0;  // sqrt(theta)
};

// Averages the recorded alpha-weighted recovery payloads and attaches the
// certificate.  `dual_value` is phi1 at the dual output point.
struct RecoveredPrimal {
  vec xbar;
  Certificate cert;
};

template <class StateLike>
RecoveredPrimal recover_primal(const StateLike& state, const EntropyLPInstance& inst,
                               double dual_value, double theta) {
  if (state.avg_accum.empty() || !(state.avg_weight > 0.0))
    throw ContractError("recover_primal: empty recovery accumulator");
  RecoveredPrimal out;
  out.xbar = state.avg_accum;
  for (double& e : out.xbar) e /= state.avg_weight;
  vec r = matvec(inst.a, out.xbar);
  for (std::size_t q = 0; q < r.size(); ++q) r[q] -= inst.b[q];
  out.cert.feasibility = std::sqrt(norm2_sq(r));
  out.cert.gap = inst.primal_value(out.xbar) + dual_value;
  out.cert.theta_scale = std::sqrt(std::max(theta, 0.0));
  return out;
}

// ---- projection (least-norm) dual ----

// Dual of min (mu/2)||x - x_g||^2 over A x = b, with an extra (1/2L)||y||^2
// regularization making it strongly convex:
//   psi(y) = (1/2)<y, (A A^T/mu + I/L) y> - <A x_g - b, y>.
// Recovery x(y) = x_g - A^T y / mu; coordinate constants
// L_k = ||row_k(A)||^2/mu + 1/L sit on the diagonal.
struct ProjectionDual {
  QuadraticProblem dual;
  DenseMat a;
  vec x_g, rhs;
  double mu = 0.0, reg_l = 0.0;

  vec recover(const vec& y) const {
    vec aty = matvec_t(a, y);
    vec x = x_g;
    for (std::size_t j = 0; j < x.size(); ++j) x[j] -= aty[j] / mu;
    return x;
  }

  vec y_star() const { return spd_solve(dual.s, dual.b); }
};

inline ProjectionDual make_projection_dual(DenseMat a, vec b, vec x_g, double mu, double L) {
  if (!(mu > 0.0) || !(L > 0.0)) throw ContractError("make_projection_dual: mu, L must be positive");
  const int m = a.rows, n = a.cols;
  if (static_cast<int>(b.size()) != m || static_cast<int>(x_g.size()) != n)
    throw ContractError("make_projection_dual: size mismatch");
  ProjectionDual pd;
  pd.dual.s = DenseMat(m, m);
  for (int r = 0; r < m; ++r)
    for (int q = 0; q < m; ++q) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += a.at(r, j) * a.at(q, j);
      pd.dual.s.at(r, q) = s / mu + (r == q ? 1.0 / L : 0.0);
    }
  vec axg = matvec(a, x_g);
  pd.dual.b.assign(static_cast<std::size_t>(m), 0.0);
  for (int r = 0; r < m; ++r)
    pd.dual.b[static_cast<std::size_t>(r)] = axg[static_cast<std::size_t>(r)] - b[static_cast<std::size_t>(r)];
  pd.dual.lambda_max_est = power_iteration(pd.dual.s);
  pd.a = std::move(a);
  pd.x_g = std::move(x_g);
  pd.rhs = std::move(b);
  pd.mu = mu;
  pd.reg_l = L;
  return pd;
}

// ---- feasible-set guard ----

// Coordinate methods only move one coordinate at a time, so a feasible set
// that couples coordinates can trap them: on the segment
// {x1 + x2 = 1, x >= 0} every single-coordinate move leaves the set and the
// method never advances.  Constrained construction therefore only accepts
// separable sets.
struct FeasibleSet {
  enum class Kind { whole_space, separable_box, coupled };
  Kind kind = Kind::whole_space;
  vec lo, hi;
  std::string description;

  static FeasibleSet whole_space() { return {}; }

  static FeasibleSet box(vec lo_, vec hi_) {
    FeasibleSet s;
    s.kind = Kind::separable_box;
    s.lo = std::move(lo_);
    s.hi = std::move(hi_);
    return s;
  }

  static FeasibleSet coupled(std::string what) {
    FeasibleSet s;
    s.kind = Kind::coupled;
    s.description = std::move(what);
    return s;
  }
};

// Rejects constructions the solvers cannot honor.  Unconstrained runs pass
// through; separable boxes are recognized but projected steps are not
// provided here; coupled sets are refused outright.
inline void require_solvable_set(const FeasibleSet& set) {
  switch (set.kind) {
    case FeasibleSet::Kind::whole_space:
      return;
    case FeasibleSet::Kind::separable_box:
      throw ConfigError(
          "separable box sets are recognized but projected coordinate steps are not "
          "implemented; run unconstrained");
    case FeasibleSet::Kind::coupled:
      throw ContractError(
          "coupled feasible set rejected: a single-coordinate step from a feasible point "
          "leaves the set (e.g. on {x1 + x2 = 1, x >= 0} every coordinate move is "
          "infeasible), so the method cannot advance" +
          (set.description.empty() ? std::string() : " [" + set.description + "]"));
  }
}

template <coord_problem P>
struct ConstrainedProblem {
  const P* inner;
  FeasibleSet set;

  ConstrainedProblem(const P& p, FeasibleSet s) : inner(&p), set(std::move(s)) {
    require_solvable_set(set);
  }

  int dim() const { return inner->dim(); }
  double value(const vec& x) const { return inner->value(x); }
  double partial(int i, const vec& x) const { return inner->partial(i, x); }
  double lip(int i) const { return inner->lip(i); }
};

}  // namespace accd
