#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "accd/core.hpp"
#include "accd/linalg.hpp"
#include "accd/problems.hpp"
#include "accd/rng.hpp"
#include "accd/trace.hpp"

// Finite-sum minimization f = (1/m) sum_k f_k by the snapshot-gradient
// estimator: grad f_xi(x) - grad f_xi(y) + grad f(y).  Epochs recompute the
// full gradient at a snapshot, run cheap inner steps, and restart; the
// estimator's variance shrinks with the optimality gap, which is what the
// probe here measures.

namespace accd {

template <class P>
concept finite_sum_problem = requires(const P& p, const vec& x, int k) {
  { p.dim() } -> std::convertible_to<int>;
  { p.components() } -> std::convertible_to<int>;
  { p.value(x) } -> std::convertible_to<double>;
  { p.component_gradient(k, x) } -> std::convertible_to<vec>;
  { p.gradient(x) } -> std::convertible_to<vec>;
  { p.smoothness() } -> std::convertible_to<double>;
  { p.strong_convexity() } -> std::convertible_to<double>;
};

// Ridge regression split into m components
//   f_k(x) = (1/2)(a_k^T x - t_k)^2 + (lambda/2)||x||^2,
// each (||a_k||^2 + lambda)-smooth; the aggregate is lambda-strongly convex.
class RidgeSum {
 public:
  RidgeSum(DenseMat a, vec targets, double lambda)
      : a_(std::move(a)), t_(std::move(targets)), lambda_(lambda) {
    if (a_.rows < 1 || a_.cols < 1) throw ContractError("RidgeSum: empty data");
    if (static_cast<int>(t_.size()) != a_.rows) throw ContractError("RidgeSum: target size");
    if (!(lambda_ > 0.0)) throw ContractError("RidgeSum: lambda must be positive");
    double worst = 0.0;
    for (int k = 0; k < a_.rows; ++k) {
      double s = 0.0;
      for (int j = 0; j < a_.cols; ++j) s += a_.at(k, j) * a_.at(k, j);
      worst = std::max(worst, s);
    }
    l_ = worst + lambda_;
  }

  int dim() const { return a_.cols; }
  int components() const { return a_.rows; }
  double smoothness() const { return l_; }
  double strong_convexity() const { return lambda_; }
  const DenseMat& data() const { return a_; }
  const vec& targets() const { return t_; }

  double component_value(int k, const vec& x) const {
    const double r = row_dot(k, x) - t_[static_cast<std::size_t>(k)];
    return 0.5 * r * r + 0.5 * lambda_ * norm2_sq(x);
  }

  vec component_gradient(int k, const vec& x) const {
    if (k < 0 || k >= a_.rows) throw ContractError("RidgeSum: component out of range");
    const double r = row_dot(k, x) - t_[static_cast<std::size_t>(k)];
    vec g(x.size());
    for (int j = 0; j < a_.cols; ++j)
      g[static_cast<std::size_t>(j)] =
          a_.at(k, j) * r + lambda_ * x[static_cast<std::size_t>(j)];
    return g;
  }

  double value(const vec& x) const {
    double s = 0.0;
    for (int k = 0; k < a_.rows; ++k) {
      const double r = row_dot(k, x) - t_[static_cast<std::size_t>(k)];
      s += 0.5 * r * r;
    }
    return s / a_.rows + 0.5 * lambda_ * norm2_sq(x);
  }

  vec gradient(const vec& x) const {
    vec g(x.size(), 0.0);
    for (int k = 0; k < a_.rows; ++k) {
      const double r = row_dot(k, x) - t_[static_cast<std::size_t>(k)];
      for (int j = 0; j < a_.cols; ++j) g[static_cast<std::size_t>(j)] += a_.at(k, j) * r;
    }
    for (int j = 0; j < a_.cols; ++j) {
      g[static_cast<std::size_t>(j)] /= a_.rows;
      g[static_cast<std::size_t>(j)] += lambda_ * x[static_cast<std::size_t>(j)];
    }
    return g;
  }

  // minimizer of (1/2m)||A x - t||^2 + (lambda/2)||x||^2
  std::pair<vec, double> solve_reference() const {
    const int n = a_.cols;
    DenseMat h(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int k = 0; k < a_.rows; ++k) s += a_.at(k, i) * a_.at(k, j);
        h.at(i, j) = s / a_.rows + (i == j ? lambda_ : 0.0);
      }
    vec rhs(static_cast<std::size_t>(n), 0.0);
    for (int k = 0; k < a_.rows; ++k)
      for (int j = 0; j < n; ++j)
        rhs[static_cast<std::size_t>(j)] += a_.at(k, j) * t_[static_cast<std::size_t>(k)];
    for (double& e : rhs) e /= a_.rows;
    vec xs = spd_solve(h, rhs);
    return {xs, value(xs)};
  }

 private:
  double row_dot(int k, const vec& x) const {
    double s = 0.0;
    for (int j = 0; j < a_.cols; ++j) s += a_.at(k, j) * x[static_cast<std::size_t>(j)];
    return s;
  }

  DenseMat a_;
  vec t_;
  double lambda_, l_;
};

// Rows drawn uniform in [-1,1]^n, then rescaled so max ||a_k||^2 = 99;
// with lambda = 1 the smoothness/strong-convexity ratio is exactly 100.
inline RidgeSum make_ridge_sum(int m, int n, std::uint64_t seed) {
  if (m < 1 || n < 1) throw ContractError("make_ridge_sum: need m, n >= 1");
  Rng rng(seed);
  DenseMat a(m, n);
  double worst = 0.0;
  for (int k = 0; k < m; ++k) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      a.at(k, j) = rng.uniform(-1.0, 1.0);
      s += a.at(k, j) * a.at(k, j);
    }
    worst = std::max(worst, s);
  }
  const double scale = std::sqrt(99.0 / worst);
  for (double& e : a.a) e *= scale;
  vec targets(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) targets[static_cast<std::size_t>(k)] = rng.uniform(-1.0, 1.0);
  return RidgeSum(std::move(a), std::move(targets), 1.0);
}

struct EpochState {
  vec snapshot;   // y^s
  vec full_grad;  // grad f(y^s), m component evaluations
  int epoch = 0;
  std::uint64_t component_evals = 0;
};

template <finite_sum_problem P>
EpochState make_epoch_state(const P& p, vec snapshot, int epoch = 0) {
  EpochState st;
  st.full_grad = p.gradient(snapshot);
  st.snapshot = std::move(snapshot);
  st.epoch = epoch;
  st.component_evals = static_cast<std::uint64_t>(p.components());
  return st;
}

// grad f_xi(x) - grad f_xi(y^s) + grad f(y^s).  The difference is taken
// first so that at x = y^s the component terms cancel bitwise and the
// estimator equals the stored full gradient exactly.  Two component
// evaluations, booked on the state.
template <finite_sum_problem P>
vec vr_estimator(const P& p, EpochState& st, const vec& x, int xi) {
  if (xi < 0 || xi >= p.components()) throw ContractError("vr_estimator: component out of range");
  vec gx = p.component_gradient(xi, x);
  const vec gy = p.component_gradient(xi, st.snapshot);
  st.component_evals += 2;
  for (std::size_t j = 0; j < gx.size(); ++j) gx[j] = (gx[j] - gy[j]) + st.full_grad[j];
  return gx;
}

struct VrEpochResult {
  vec x;
  EpochState state;
  std::uint64_t component_evals = 0;  // m + 2 * batch * n_inner exactly
};

// Inner loop only; assumes the state already holds the snapshot gradient.
template <finite_sum_problem P>
vec vr_inner_loop(const P& p, EpochState& st, std::uint64_t n_inner, double step_size, Rng& rng,
                  int batch = 1) {
  if (!(step_size > 0.0)) throw ContractError("vr_inner_loop: step size must be positive");
  if (batch < 1) throw ContractError("vr_inner_loop: batch must be >= 1");
  const int m = p.components();
  vec x = st.snapshot;
  vec avg(x.size());
  std::vector<double> recent;
  for (std::uint64_t t = 0; t < n_inner; ++t) {
    std::fill(avg.begin(), avg.end(), 0.0);
    for (int j = 0; j < batch; ++j) {
      const int xi = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
      const vec est = vr_estimator(p, st, x, xi);
      for (std::size_t q = 0; q < avg.size(); ++q) avg[q] += est[q];
    }
    double moved = 0.0;
    for (std::size_t q = 0; q < x.size(); ++q) {
      x[q] -= step_size * avg[q] / batch;
      moved += avg[q] * avg[q];
    }
    recent.push_back(moved);
    if (recent.size() > 8) recent.erase(recent.begin());
    for (double e : x)
      if (!std::isfinite(e))
        throw DivergenceError("variance-reduced inner loop produced a non-finite iterate",
                              std::move(recent));
  }
  return x;
}

// One full epoch: snapshot gradient (m evaluations) plus n_inner steps of
// size step_size using batch-averaged estimators.  n_inner = 0 degenerates
// to returning the snapshot.
template <finite_sum_problem P>
VrEpochResult vr_epoch(const P& p, const vec& y_snapshot, std::uint64_t n_inner,
                       double step_size, Rng& rng, int batch = 1) {
  VrEpochResult out;
  out.state = make_epoch_state(p, y_snapshot);
  out.x = n_inner == 0 ? y_snapshot : vr_inner_loop(p, out.state, n_inner, step_size, rng, batch);
  out.component_evals = out.state.component_evals;
  return out;
}

struct VarianceProbe {
  double d_s = 0.0;        // E_xi || estimator - grad f(x) ||^2
  double bound_ref = 0.0;  // L (f(y^s) - f_*) + L (f(x) - f_*)
  bool exhaustive = false;
};

// Monte-Carlo (or exhaustive, when samples >= m) estimate of the estimator
// variance at x against the reference scale from the gap bound.  Only valid
// for unconstrained problems, where grad f(x_*) = 0; pass the feasible set
// when one exists so the guard can refuse it.
template <finite_sum_problem P>
VarianceProbe variance_probe(const P& p, EpochState& st, const vec& x, int samples, Rng& rng,
                             double fstar, const FeasibleSet* set = nullptr) {
  if (samples < 1) throw ContractError("variance_probe: need at least one sample");
  if (set && set->kind != FeasibleSet::Kind::whole_space)
    throw ContractError(
        "variance_probe: the gap bound needs grad f(x_*) = 0, which constrained optima "
        "do not satisfy; probe refused");
  const int m = p.components();
  const vec gx = p.gradient(x);
  VarianceProbe out;
  out.exhaustive = samples >= m;
  double acc = 0.0;
  const int draws = out.exhaustive ? m : samples;
  for (int t = 0; t < draws; ++t) {
    const int xi = out.exhaustive ? t : static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
    const vec est = vr_estimator(p, st, x, xi);
    double d = 0.0;
    for (std::size_t q = 0; q < est.size(); ++q) {
      const double e = est[q] - gx[q];
      d += e * e;
    }
    acc += d;
  }
  out.d_s = acc / draws;
  const double l = p.smoothness();
  out.bound_ref = l * (p.value(st.snapshot) - fstar) + l * (p.value(x) - fstar);
  return out;
}

struct VrConfig {
  std::uint64_t n_inner = 0;  // 0 -> ceil(4 L / mu)
  double step_size = 0.0;     // 0 -> 1/(10 L)
  int batch = 1;
  int max_epochs = 1000;
  std::uint64_t eval_budget = 0;  // 0 -> unlimited
  std::uint64_t run_id = 0;
};

struct VrDriverResult {
  vec x;
  int epochs = 0;
  std::uint64_t component_evals = 0;
  bool converged = false;
  double final_proxy = 0.0;
  std::vector<TraceRecord> trace;  // one row per epoch
};

// Epoch driver: stops when ||grad f(y^s)||^2 / (2 mu) <= epsilon (an upper
// bound on the gap under mu-strong convexity) or when the budget runs out,
// in which case the partial result is flagged.
template <finite_sum_problem P>
VrDriverResult vr_driver(const P& p, const vec& x0, double epsilon, Rng& rng,
                         const VrConfig& cfg = {}) {
  if (!(epsilon > 0.0)) throw ContractError("vr_driver: epsilon must be positive");
  const double mu = p.strong_convexity();
  if (!(mu > 0.0)) throw ContractError("vr_driver: needs strong convexity");
  const double l = p.smoothness();
  const std::uint64_t n_inner =
      cfg.n_inner > 0 ? cfg.n_inner : static_cast<std::uint64_t>(std::ceil(4.0 * l / mu));
  const double step = cfg.step_size > 0.0 ? cfg.step_size : 1.0 / (10.0 * l);

  VrDriverResult out;
  out.x = x0;
  for (int s = 0; s < cfg.max_epochs; ++s) {
    EpochState st = make_epoch_state(p, out.x, s);
    out.component_evals += st.component_evals;
    const double proxy = norm2_sq(st.full_grad) / (2.0 * mu);
    out.final_proxy = proxy;

    TraceRecord row;
    row.run_id = cfg.run_id;
    row.restart = s;
    row.iteration = static_cast<std::uint64_t>(s);
    row.coord_calls = out.component_evals;
    row.gap_or_value = proxy;
    out.trace.push_back(row);

    if (proxy <= epsilon) {
      out.converged = true;
      return out;
    }
    if (cfg.eval_budget > 0 &&
        out.component_evals + 2 * static_cast<std::uint64_t>(cfg.batch) * n_inner > cfg.eval_budget)
      return out;  // partial result, converged stays false

    const std::uint64_t before = st.component_evals;
    out.x = vr_inner_loop(p, st, n_inner, step, rng, cfg.batch);
    out.component_evals += st.component_evals - before;
    ++out.epochs;
  }
  return out;
}

}  // namespace accd
