#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "accd/core.hpp"
#include "accd/rng.hpp"
#include "accd/sampler.hpp"
#include "accd/trace.hpp"

// Randomized coordinate descent accelerated by linear coupling.  Each
// iteration couples x = tau*z + (1-tau)*y, takes one coordinate gradient
// step from x into y, and one coordinate mirror step from z.  Sampling is
// p_i proportional to L_i^beta; every n is replaced by n_eff = sum L_i^beta
// and the mirror input is scaled by 1/p_i, which keeps the estimator
// unbiased and reduces to the uniform scheme at beta = 0.

namespace accd {

struct RunConfig {
  std::uint64_t log_stride = 0;  // 0 -> ceil(iters/1000)
  std::optional<double> fstar;   // enables gap column
  std::optional<vec> xstar;      // enables (1/2)||z-x_*||^2 column
  double divergence_factor = 1e3;
  bool adaptive = false;  // backtracking Lipschitz estimation
  bool trace_enabled = true;
  std::uint64_t run_id = 0;
  std::int64_t restart_index = -1;
};

struct CouplingState {
  vec x, y, z;
  std::uint64_t iters = 0;
  std::uint64_t coord_calls = 0;
  std::uint64_t value_calls = 0;
  // running weighted average of the coupling points x_k (weight 1 for the
  // fixed-step epoch, alpha_{k+1} for varying steps); doubles as the
  // primal-dual payload accumulator when a payload map is installed
  vec avg_accum;
  double avg_weight = 0.0;
  vec lhat;  // adaptive Lipschitz estimates (empty when adaptivity is off)
  std::vector<TraceRecord> trace;
};

// Step parameters for iteration k (0-based): tau_k and alpha_{k+1}.
// alpha_n2 carries alpha_{k+1} * n_eff^2 exactly (it is the quantity the
// coupling identities are written in, kept separate to avoid re-rounding).
struct Schedule {
  enum class Kind { fixed, simple, recurrence };

  struct Step {
    double tau;
    double alpha_next;
    double alpha_n2;
  };

  Kind kind = Kind::simple;
  double n_eff = 0.0;

  static Schedule fixed_of(double alpha, double tau, double n_eff) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ContractError("Schedule: alpha must be positive");
    if (!(tau > 0.0) || !(tau <= 1.0)) throw ContractError("Schedule: tau must lie in (0,1]");
    Schedule s;
    s.kind = Kind::fixed;
    s.n_eff = n_eff;
    s.alpha_ = alpha;
    s.tau_ = tau;
    return s;
  }

  // tau_k = 2/(k+2), alpha_{k+1} = (k+2)/(2 n_eff^2); tau_k*alpha_{k+1}*n_eff^2 = 1
  static Schedule simple_for(double n_eff) {
    if (!(n_eff > 0.0)) throw ContractError("Schedule: n_eff must be positive");
    Schedule s;
    s.kind = Kind::simple;
    s.n_eff = n_eff;
    return s;
  }

  // alpha_{k+1} is the positive root of a^2 n^2 - a = alpha_k^2 n^2 with
  // alpha_0 = 0 (hence alpha_1 = 1/n^2 and tau_0 = 1).  Experimental: the
  // simple schedule is the validated default.
  static Schedule recurrence_for(double n_eff) {
    Schedule s = simple_for(n_eff);
    s.kind = Kind::recurrence;
    return s;
  }

  Step next() {
    switch (kind) {
      case Kind::fixed:
        ++k_;
        return {tau_, alpha_, alpha_ * n_eff * n_eff};
      case Kind::simple: {
        const double an2 = 0.5 * static_cast<double>(k_ + 2);  // alpha_{k+1} n_eff^2
        const Step st{1.0 / an2, an2 / (n_eff * n_eff), an2};
        ++k_;
        return st;
      }
      case Kind::recurrence: {
        const double n2 = n_eff * n_eff;
        const double c = alpha_state_ * alpha_state_ * n2;  // alpha_k^2 n^2
        const double a = (1.0 + std::sqrt(1.0 + 4.0 * n2 * c)) / (2.0 * n2);
        alpha_state_ = a;
        ++k_;
        return {1.0 / (a * n2), a, a * n2};
      }
    }
    throw ContractError("Schedule: bad kind");
  }

  void reset() {
    k_ = 0;
    alpha_state_ = 0.0;
  }

  std::int64_t step_index() const { return k_; }

 private:
  double alpha_ = 0.0, tau_ = 0.0;  // fixed kind
  double alpha_state_ = 0.0;        // recurrence kind
  std::int64_t k_ = 0;
};

// Backtracking Lipschitz estimation for one coordinate: doubles the trial
// until the gradient step achieves the standard decrease
// f(step) <= f(x) - g^2/(2 L), then reports the accepted constant.  The
// sampling tree weight for i is refreshed to accepted^beta; next time the
// search starts from accepted/2 (caller keeps that in its lhat array).
struct AdaptResult {
  double accepted;
  double g;   // partial derivative at (i, x), computed here
  double fx;  // f(x), computed here
  std::uint64_t value_calls;
};

template <coord_problem P>
AdaptResult adapt_lipschitz(const P& p, SamplingTree& tree, double beta, int i,
                            const vec& x, double l_start) {
  if (!(l_start > 0.0) || !std::isfinite(l_start))
    throw ContractError("adapt_lipschitz: starting estimate must be positive");
  const double g = p.partial(i, x);
  if (!std::isfinite(g)) throw OracleError("adapt_lipschitz: non-finite partial", i, x, g);
  const double fx = p.value(x);
  std::uint64_t vcalls = 1;
  double trial = l_start;
  vec probe = x;
  const double limit = std::ldexp(l_start, 60);
  for (;;) {
    probe[i] = x[i] - g / trial;
    const double fy = p.value(probe);
    ++vcalls;
    const double slack = 1e-12 * (1.0 + std::abs(fx));
    if (fy <= fx - g * g / (2.0 * trial) + slack) break;
    trial *= 2.0;
    if (trial > limit)
      throw OracleError("adapt_lipschitz: no smooth majorant below 2^60 * start", i, x, trial);
  }
  tree.update_weight(i, detail::pow_weight(trial, beta));
  return {trial, g, fx, vcalls};
}

namespace detail {

struct LoopCounters {
  std::uint64_t coord = 0, value = 0;
};

inline std::uint64_t stride_for(std::uint64_t iters, std::uint64_t requested) {
  if (requested > 0) return requested;
  return iters < 1000 ? 1 : (iters + 999) / 1000;
}

template <coord_problem P>
void log_row(const P& p, const WeightedNorm& norm, const RunConfig& cfg,
             CouplingState& st, const vec& watch_point, double f0_scale) {
  const double f = p.value(watch_point);
  TraceRecord r;
  r.run_id = cfg.run_id;
  r.restart = cfg.restart_index;
  r.iteration = st.iters;
  r.coord_calls = st.coord_calls;
  r.value_calls = st.value_calls;
  r.gap_or_value = cfg.fstar ? f - *cfg.fstar : f;
  if (cfg.xstar) r.half_dist_sq = norm.bregman(*cfg.xstar, st.z);
  st.trace.push_back(std::move(r));
  if (std::abs(f) > cfg.divergence_factor * f0_scale) {
    std::vector<double> recent;
    const std::size_t take = std::min<std::size_t>(st.trace.size(), 8);
    for (std::size_t t = st.trace.size() - take; t < st.trace.size(); ++t)
      recent.push_back(st.trace[t].gap_or_value);
    throw DivergenceError("coupling run diverged: |f| exceeded " +
                              std::to_string(cfg.divergence_factor) + " x initial scale",
                          std::move(recent));
  }
}

template <coord_problem P>
void check_setup(const P& p, const WeightedNorm& norm, const SamplingTree& tree, const vec& x0) {
  const int n = p.dim();
  if (static_cast<int>(x0.size()) != n) throw ContractError("starting point has wrong dimension");
  if (static_cast<int>(norm.weights.size()) != n) throw ContractError("norm dimension mismatch");
  if (tree.size() != n) throw ContractError("sampling tree dimension mismatch");
}

}  // namespace detail

template <coord_problem P>
CouplingState run_coupled_loop(const P& p, const WeightedNorm& norm, SamplingTree& tree,
                               const vec& x0, Schedule sched, std::uint64_t iters,
                               Rng& rng, const RunConfig& cfg, bool unit_average,
                               const std::function<vec(const vec&)>& payload);

struct EpochResult {
  vec xbar;
  CouplingState state;
};

// One fixed-parameter pass of K coupled iterations.  The call site is
// responsible for the coupling relation (1-tau)/tau = alpha * n_eff^2; this
// routine only validates ranges.  Exactly K coordinate-oracle calls (plus
// backtracking value calls when cfg.adaptive).  Returns the running average
// xbar_K = (1/K) sum_{k=1..K} x_k of the coupling points.
template <coord_problem P>
EpochResult acrcd_epoch(const P& p, const WeightedNorm& norm, SamplingTree& tree,
                        const vec& x0, double alpha, double tau, std::uint64_t K,
                        Rng& rng, const RunConfig& cfg = {}) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ContractError("acrcd_epoch: alpha must be positive");
  if (!(tau > 0.0) || !(tau <= 1.0)) throw ContractError("acrcd_epoch: tau must lie in (0,1]");
  if (K < 1) throw ContractError("acrcd_epoch: K must be >= 1");
  detail::check_setup(p, norm, tree, x0);

  Schedule sched = Schedule::fixed_of(alpha, tau, tree.total());
  CouplingState st = run_coupled_loop(p, norm, tree, x0, sched, K, rng, cfg,
                                      /*unit_average=*/true, nullptr);
  vec xbar = st.avg_accum;
  for (auto& e : xbar) e /= st.avg_weight;
  return {std::move(xbar), std::move(st)};
}

struct StarResult {
  vec y_out;
  CouplingState state;
};

// Varying-step coupled run ("star" method): N iterations under the given
// schedule, returning y_N.  The state's avg_accum holds
// sum_k alpha_{k+1} * payload(x_{k+1}) (payload defaults to the coupling
// point itself), which is what primal recovery consumes.
template <coord_problem P>
StarResult acrcd_star(const P& p, const WeightedNorm& norm, SamplingTree& tree,
                      const vec& x0, Schedule schedule, std::uint64_t N, Rng& rng,
                      const RunConfig& cfg = {},
                      const std::function<vec(const vec&)>& payload = nullptr) {
  if (N < 1) throw ContractError("acrcd_star: N must be >= 1");
  detail::check_setup(p, norm, tree, x0);
  schedule.reset();
  CouplingState st = run_coupled_loop(p, norm, tree, x0, schedule, N, rng, cfg,
                                      /*unit_average=*/false, payload);
  return {st.y, std::move(st)};
}

// Shared iteration body.  unit_average selects weight-1 accumulation of the
// coupling points (fixed-step epoch) versus alpha_{k+1} weights.
template <coord_problem P>
CouplingState run_coupled_loop(const P& p, const WeightedNorm& norm, SamplingTree& tree,
                               const vec& x0, Schedule sched, std::uint64_t iters,
                               Rng& rng, const RunConfig& cfg, bool unit_average,
                               const std::function<vec(const vec&)>& payload) {
  const int n = p.dim();
  CouplingState st;
  st.x = x0;
  st.y = x0;
  st.z = x0;
  if (cfg.adaptive) {
    st.lhat.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) st.lhat[static_cast<std::size_t>(i)] = p.lip(i);
  }

  const std::uint64_t stride = detail::stride_for(iters, cfg.log_stride);
  const double f0_scale = cfg.trace_enabled ? 1.0 + std::abs(p.value(x0)) : 0.0;

  for (std::uint64_t k = 0; k < iters; ++k) {
    const Schedule::Step ps = sched.next();

    // x_{k+1} = tau_k z_k + (1 - tau_k) y_k
    for (int j = 0; j < n; ++j)
      st.x[static_cast<std::size_t>(j)] = ps.tau * st.z[static_cast<std::size_t>(j)] +
                                          (1.0 - ps.tau) * st.y[static_cast<std::size_t>(j)];

    const double w_avg = unit_average ? 1.0 : ps.alpha_next;
    if (payload) {
      vec pl = payload(st.x);
      if (st.avg_accum.empty()) st.avg_accum.assign(pl.size(), 0.0);
      for (std::size_t j = 0; j < pl.size(); ++j) st.avg_accum[j] += w_avg * pl[j];
    } else {
      if (st.avg_accum.empty()) st.avg_accum.assign(static_cast<std::size_t>(n), 0.0);
      for (int j = 0; j < n; ++j)
        st.avg_accum[static_cast<std::size_t>(j)] += w_avg * st.x[static_cast<std::size_t>(j)];
    }
    st.avg_weight += w_avg;

    const int i = tree.draw(rng);
    double g, li;
    if (cfg.adaptive) {
      AdaptResult ar = adapt_lipschitz(p, tree, norm.beta, i, st.x,
                                       st.lhat[static_cast<std::size_t>(i)]);
      g = ar.g;
      li = ar.accepted;
      st.lhat[static_cast<std::size_t>(i)] = 0.5 * ar.accepted;
      st.value_calls += ar.value_calls;
      ++st.coord_calls;
    } else {
      g = p.partial(i, st.x);
      ++st.coord_calls;
      if (!std::isfinite(g)) throw OracleError("coupling loop: non-finite partial", i, st.x, g);
      li = p.lip(i);
    }

    // y_{k+1} = Grad_i(x_{k+1});  z_{k+1} = Mirr_{z_k}(alpha_{k+1} (1/p_i) g e_i)
    st.y = st.x;
    st.y[static_cast<std::size_t>(i)] -= g / li;
    const double invp = tree.total() / tree.weight(i);
    st.z[static_cast<std::size_t>(i)] -=
        ps.alpha_next * invp * g / norm.weights[static_cast<std::size_t>(i)];

    ++st.iters;
    if (cfg.trace_enabled && (st.iters % stride == 0 || st.iters == iters))
      detail::log_row(p, norm, cfg, st, st.y, f0_scale);
  }
  return st;
}

struct AmplifyResult {
  vec best;
  double f_best = 0.0;
  std::vector<double> f_all;
  std::uint64_t value_calls = 0;
};

// Run `replicas` independent candidates and keep the best by objective
// value: each replica halves the failure probability of the median bound.
// Exactly `replicas` value-oracle calls beyond what the closure spends.
template <coord_problem P, class RunFn>
AmplifyResult markov_amplify(const P& p, int replicas, std::uint64_t seed, RunFn&& run) {
  if (replicas < 1) throw ContractError("markov_amplify: need at least one replica");
  AmplifyResult out;
  for (int r = 0; r < replicas; ++r) {
    Rng sub = Rng::substream(seed, static_cast<std::uint64_t>(r));
    vec cand = run(sub, r);
    const double f = p.value(cand);
    ++out.value_calls;
    out.f_all.push_back(f);
    if (r == 0 || f < out.f_best) {
      out.f_best = f;
      out.best = std::move(cand);
    }
  }
  return out;
}

struct RestartResult {
  vec x;
  std::uint64_t coord_calls = 0;
  std::uint64_t value_calls = 0;
  int rounds = 0;
  int replicas = 0;
  std::vector<std::uint64_t> round_iters;
  std::vector<TraceRecord> trace;  // one summary row per round
};

// Halving-restart driver: round r runs amplified fixed-parameter epochs at
// gap level d_r = d / 2^r with alpha = sqrt(theta/d_r)/n_eff,
// tau = 1/(alpha n_eff^2 + 1), K = ceil(c n_eff sqrt(theta/d_r)).  theta
// must bound V_x(x_*) uniformly over the f(x) - f_* <= d level set, which
// makes it valid across restarts.  rounds = max(1, ceil(log2(d/eps))) and
// every round runs max(1, ceil(log2(rounds/sigma))) replicas, so even the
// eps >= d edge performs one amplified epoch.
template <coord_problem P>
RestartResult acrcd_restart(const P& p, const WeightedNorm& norm, SamplingTree& tree,
                            const vec& x0, double theta, double d, double eps,
                            double sigma, double c_epoch, std::uint64_t seed,
                            const RunConfig& cfg = {}) {
  if (!(theta > 0.0)) throw ContractError("acrcd_restart: theta must be positive");
  if (!(d > 0.0)) throw ContractError("acrcd_restart: d must be positive");
  if (!(eps > 0.0)) throw ContractError("acrcd_restart: eps must be positive");
  if (!(sigma > 0.0) || !(sigma < 1.0)) throw ContractError("acrcd_restart: sigma must lie in (0,1)");
  if (!(c_epoch >= 1.0)) throw ContractError("acrcd_restart: epoch constant must be >= 1");
  detail::check_setup(p, norm, tree, x0);

  int rounds = 0;
  while (eps * std::ldexp(1.0, rounds) < d && rounds < 64) ++rounds;  // ceil(log2(d/eps))
  rounds = std::max(rounds, 1);
  int replicas = 0;
  while (sigma * std::ldexp(1.0, replicas) < static_cast<double>(rounds) && replicas < 64)
    ++replicas;  // ceil(log2(rounds/sigma))
  replicas = std::max(replicas, 1);

  const double n_eff = tree.total();
  RestartResult out;
  out.rounds = rounds;
  out.replicas = replicas;
  out.x = x0;

  RunConfig inner = cfg;
  inner.trace_enabled = false;

  for (int r = 0; r < rounds; ++r) {
    const double d_r = std::ldexp(d, -r);
    const double alpha = std::sqrt(theta / d_r) / n_eff;
    const double tau = 1.0 / (alpha * n_eff * n_eff + 1.0);
    const std::uint64_t K =
        static_cast<std::uint64_t>(std::ceil(c_epoch * n_eff * std::sqrt(theta / d_r)));

    const vec start = out.x;
    AmplifyResult amp = markov_amplify(
        p, replicas, mix64(seed ^ mix64(static_cast<std::uint64_t>(r) + 0x5157u)),
        [&](Rng& sub, int) {
          EpochResult er = acrcd_epoch(p, norm, tree, start, alpha, tau, K, sub, inner);
          out.coord_calls += er.state.coord_calls;
          out.value_calls += er.state.value_calls;
          return er.xbar;
        });
    out.value_calls += amp.value_calls;
    out.x = std::move(amp.best);
    out.round_iters.push_back(K);

    TraceRecord row;
    row.run_id = cfg.run_id;
    row.restart = r;
    row.iteration = out.round_iters.size();
    row.coord_calls = out.coord_calls;
    row.value_calls = out.value_calls;
    row.gap_or_value = cfg.fstar ? amp.f_best - *cfg.fstar : amp.f_best;
    out.trace.push_back(row);
  }
  return out;
}

struct ScResult {
  vec x;
  int restarts = 0;
  std::uint64_t coord_calls = 0;
  std::uint64_t value_calls = 0;
  std::vector<double> theta_schedule;
  std::vector<vec> restart_points;
  std::vector<TraceRecord> trace;
};

// Strongly convex variant: fixed-length varying-step runs with halving
// distance estimates.  mu is strong convexity in the run norm, theta0 must
// dominate V_{x0}(x_*).  Each restart runs N_r = ceil(n_eff sqrt(8/mu))
// iterations, which halves the distance bound (gap <= 4 n_eff^2 Theta / N^2
// combined with V <= gap/mu); stops once mu * Theta_r <= eps.
template <coord_problem P>
ScResult acrcd_star_strongly_convex(const P& p, const WeightedNorm& norm, SamplingTree& tree,
                                    const vec& x0, double mu, double eps, double theta0,
                                    std::uint64_t seed, const RunConfig& cfg = {},
                                    Schedule::Kind kind = Schedule::Kind::simple) {
  if (!(mu > 0.0)) throw ContractError("strongly convex run: mu must be positive");
  if (!(eps > 0.0)) throw ContractError("strongly convex run: eps must be positive");
  if (!(theta0 > 0.0)) throw ContractError("strongly convex run: theta0 must be positive");
  detail::check_setup(p, norm, tree, x0);

  int rounds = 0;
  while (eps * std::ldexp(1.0, rounds) < mu * theta0 && rounds < 128) ++rounds;

  const double n_eff = tree.total();
  const std::uint64_t n_r =
      static_cast<std::uint64_t>(std::ceil(n_eff * std::sqrt(8.0 / mu)));

  ScResult out;
  out.x = x0;
  out.theta_schedule.push_back(theta0);
  double theta = theta0;

  for (int r = 0; r < rounds; ++r) {
    Schedule sched = (kind == Schedule::Kind::recurrence) ? Schedule::recurrence_for(n_eff)
                                                          : Schedule::simple_for(n_eff);
    Rng sub = Rng::substream(seed, static_cast<std::uint64_t>(r));
    RunConfig inner = cfg;
    inner.restart_index = r;
    StarResult sr = acrcd_star(p, norm, tree, out.x, sched, n_r, sub, inner);
    out.x = std::move(sr.y_out);
    out.coord_calls += sr.state.coord_calls;
    out.value_calls += sr.state.value_calls;
    for (auto& row : sr.state.trace) out.trace.push_back(row);
    theta *= 0.5;
    out.theta_schedule.push_back(theta);
    out.restart_points.push_back(out.x);
    ++out.restarts;
  }
  return out;
}

}  // namespace accd
