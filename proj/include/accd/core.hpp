#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "accd/rng.hpp"

// Coordinate-oracle problem interface plus the two primitive steps every
// method here is built from: a coordinate gradient step and a coordinate
// mirror (prox) step in a diagonally weighted Euclidean norm.

namespace accd {

using vec = std::vector<double>;

struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raised when an oracle returns a non-finite value; carries the query.
struct OracleError : std::runtime_error {
  int index;
  vec point;
  double magnitude;  // offending value or exponent, for diagnostics
  OracleError(const std::string& msg, int i, vec x, double mag = 0.0)
      : std::runtime_error(msg), index(i), point(std::move(x)), magnitude(mag) {}
};

struct DivergenceError : std::runtime_error {
  std::vector<double> recent_values;  // last logged objective values
  DivergenceError(const std::string& msg, std::vector<double> recent)
      : std::runtime_error(msg), recent_values(std::move(recent)) {}
};

template <class P>
concept coord_problem = requires(const P& p, const vec& x, int i) {
  { p.dim() } -> std::convertible_to<int>;
  { p.value(x) } -> std::convertible_to<double>;
  { p.partial(i, x) } -> std::convertible_to<double>;
  { p.lip(i) } -> std::convertible_to<double>;
};

namespace detail {
inline double pow_weight(double L, double e) {
  if (e == 0.0) return 1.0;
  if (e == 1.0) return L;
  if (e == 0.5) return std::sqrt(L);
  if (e == -1.0) return 1.0 / L;
  return std::pow(L, e);
}
}  // namespace detail

// ||x||^2 = sum_i w_i x_i^2 with w_i = L_i^(1-2*beta).
// beta = 0   -> w_i = L_i (the norm the uniform-sampling analysis lives in)
// beta = 1/2 -> plain Euclidean
// Dual norm: ||g||_*^2 = sum_i g_i^2 / w_i.
struct WeightedNorm {
  double beta = 0.0;
  vec weights;

  static WeightedNorm from_lipschitz(const vec& lips, double beta) {
    if (beta < 0.0 || beta > 1.0) throw ContractError("beta must lie in [0,1]");
    WeightedNorm n;
    n.beta = beta;
    n.weights.resize(lips.size());
    const double e = 1.0 - 2.0 * beta;
    for (std::size_t i = 0; i < lips.size(); ++i) {
      if (!(lips[i] > 0.0) || !std::isfinite(lips[i]))
        throw ContractError("Lipschitz constants must be positive and finite");
      n.weights[i] = detail::pow_weight(lips[i], e);
    }
    return n;
  }

  double norm_sq(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i] * x[i];
    return s;
  }

  double dual_norm_sq(std::span<const double> g) const {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * g[i] / weights[i];
    return s;
  }

  // V_a(b) = (1/2) ||b-a||^2, the prox distance used by the mirror step
  double bregman(std::span<const double> a, std::span<const double> b) const {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = b[i] - a[i];
      s += weights[i] * d * d;
    }
    return 0.5 * s;
  }
};

// y = x - (1/L_i) df/dx_i(x) * e_i.  One coordinate-oracle call.
template <coord_problem P>
vec grad_step(const P& p, const vec& x, int i) {
  if (i < 0 || i >= p.dim()) throw ContractError("grad_step: coordinate out of range");
  const double g = p.partial(i, x);
  if (!std::isfinite(g)) throw OracleError("grad_step: non-finite partial derivative", i, x, g);
  vec y = x;
  y[i] -= g / p.lip(i);
  return y;
}

// argmin_v { <xi, v-z> + V_z(v) } for one-hot xi: v = z - xi_i/w_i * e_i.
inline vec mirr_step_at(const WeightedNorm& norm, const vec& z, int i, double xi_i) {
  if (i < 0 || static_cast<std::size_t>(i) >= z.size())
    throw ContractError("mirr_step: coordinate out of range");
  vec v = z;
  v[i] -= xi_i / norm.weights[i];
  return v;
}

// Dense-argument form; validates the one-nonzero contract.
inline vec mirr_step(const WeightedNorm& norm, const vec& z, const vec& xi) {
  if (xi.size() != z.size()) throw ContractError("mirr_step: size mismatch");
  int hot = -1;
  for (std::size_t i = 0; i < xi.size(); ++i) {
    if (xi[i] != 0.0) {
      if (hot >= 0) throw ContractError("mirr_step: xi must have at most one nonzero");
      hot = static_cast<int>(i);
    }
  }
  if (hot < 0) return z;
  return mirr_step_at(norm, z, hot, xi[hot]);
}

// Central-difference audit of the partial-derivative oracle.
// Returns max_i |fd_i - partial_i| / (1 + |partial_i|).  2n value calls.
template <coord_problem P>
double fd_check(const P& p, const vec& x, double h = 1e-5) {
  if (!(h > 0.0)) throw ContractError("fd_check: h must be positive");
  const int n = p.dim();
  double worst = 0.0;
  vec xp = x, xm = x;
  for (int i = 0; i < n; ++i) {
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    const double fd = (p.value(xp) - p.value(xm)) / (2.0 * h);
    const double g = p.partial(i, x);
    const double err = std::abs(fd - g) / (1.0 + std::abs(g));
    if (err > worst) worst = err;
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return worst;
}

// Inexact first-order oracle: adds a deterministic +-delta*sqrt(L_i)
// perturbation to each partial-derivative answer.  The sign comes from a
// hash of (noise_seed, i, call counter), so a fixed seed reproduces the
// exact perturbation stream; the error bound is |noise| <= c*delta with
// c = sqrt(L_i) per coordinate (delta in function-value units keeps the
// noise-to-curvature ratio uniform across coordinates).
template <coord_problem P>
class InexactOracle {
 public:
  InexactOracle(const P& inner, double delta, std::uint64_t noise_seed)
      : inner_(&inner), delta_(delta), seed_(noise_seed) {
    if (delta < 0.0) throw ContractError("InexactOracle: delta must be >= 0");
  }

  int dim() const { return inner_->dim(); }
  double value(const vec& x) const { return inner_->value(x); }
  double lip(int i) const { return inner_->lip(i); }

  double partial(int i, const vec& x) const {
    const double g = inner_->partial(i, x);
    if (delta_ == 0.0) return g;  // bit-identical passthrough
    const double u = hash_sign(seed_, static_cast<std::uint64_t>(i), calls_++);
    return g + u * delta_ * std::sqrt(inner_->lip(i));
  }

  std::uint64_t calls() const { return calls_; }

 private:
  const P* inner_;
  double delta_;
  std::uint64_t seed_;
  mutable std::uint64_t calls_ = 0;
};

template <coord_problem P>
InexactOracle<P> wrap_inexact(const P& p, double delta, std::uint64_t noise_seed) {
  return InexactOracle<P>(p, delta, noise_seed);
}

}  // namespace accd
