#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "accd/coupling.hpp"
#include "accd/core.hpp"
#include "accd/linalg.hpp"
#include "accd/problems.hpp"
#include "accd/rng.hpp"
#include "accd/sampler.hpp"
#include "accd/sparse.hpp"
#include "accd/sparse_engine.hpp"
#include "accd/trace.hpp"
#include "accd/vrsum.hpp"

// Reproducible experiment runner: a JSON config names a generated problem,
// a method with its parameters, and a seed sweep; running it emits one
// trace CSV per seed plus a summary CSV.  Identical configs produce
// byte-identical outputs (wall-clock timing is off by default because it
// would break that).

namespace accd::bench {

using njson = nlohmann::json;

struct ProblemSpec {
  std::string kind;  // example2 | chain | diag | entropy_lp | least_squares | projection | ridge_sum
  int n = 0;
  int m = 0;
  std::uint64_t seed = 0;
  double density = 0.0;
  vec lips;                  // diag
  double mu = 0.0, l = 0.0;  // projection
  std::string dual = "phi1";  // entropy_lp objective choice
};

struct MethodSpec {
  std::string kind;  // acrcd | acrcd_star | acrcd_star_sc | acrcd_restart |
                     // acrcd_prime | acrcd_star_prime | vr | full_gradient
  double beta = 0.0;
  std::uint64_t iters = 0;
  double alpha = 0.0, tau = 0.0;
  double theta = 0.0, d = 0.0;
  double eps = 0.0, sigma = 0.1, c_epoch = 9.0;
  double mu = 0.0, theta0 = 0.0;
  double delta = 0.0;
  bool adaptive = false;
  std::string schedule = "simple";
  // finite-sum driver knobs
  double epsilon = 0.0, step = 0.0;
  std::uint64_t n_inner = 0, eval_budget = 0;
  int batch = 1, max_epochs = 1000;
};

struct RunSpec {
  std::vector<std::uint64_t> seeds;
  std::uint64_t log_stride = 0;
  bool record_timing = false;
  double divergence_factor = 1e3;
  bool trace = true;
  std::string out_dir;
};

struct ExperimentConfig {
  ProblemSpec problem;
  MethodSpec method;
  RunSpec run;
  njson raw;
};

// ---- config parsing (strict: unknown keys are rejected with their path) ----

namespace detail {

inline void check_keys(const njson& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

inline double num_at(const njson& j, const char* key, double fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

inline std::uint64_t uint_at(const njson& j, const char* key, std::uint64_t fallback,
                             const std::string& where) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<double>() < 0)
    throw ConfigError(where + "." + key + ": expected a nonnegative integer");
  return v.get<std::uint64_t>();
}

inline bool bool_at(const njson& j, const char* key, bool fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw ConfigError(where + "." + key + ": expected a boolean");
  return j.at(key).get<bool>();
}

inline std::string str_at(const njson& j, const char* key, const std::string& fallback,
                          const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return j.at(key).get<std::string>();
}

// "a..b" (inclusive) or an explicit array
inline std::vector<std::uint64_t> parse_seeds(const njson& v, const std::string& where) {
  std::vector<std::uint64_t> out;
  if (v.is_array()) {
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<double>() < 0)
        throw ConfigError(where + ": seeds must be nonnegative integers");
      out.push_back(e.get<std::uint64_t>());
    }
    return out;
  }
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    const auto pos = s.find("..");
    if (pos == std::string::npos) throw ConfigError(where + ": expected \"a..b\"");
    std::uint64_t a = 0, b = 0;
    try {
      a = std::stoull(s.substr(0, pos));
      b = std::stoull(s.substr(pos + 2));
    } catch (const std::exception&) {
      throw ConfigError(where + ": malformed seed range '" + s + "'");
    }
    if (b < a) throw ConfigError(where + ": seed range must be ascending");
    for (std::uint64_t x = a; x <= b; ++x) out.push_back(x);
    return out;
  }
  throw ConfigError(where + ": expected an array or \"a..b\"");
}

}  // namespace detail

inline ExperimentConfig parse_config(const njson& j) {
  detail::check_keys(j, {"problem", "method", "run"}, "config");
  if (!j.contains("problem") || !j.contains("method"))
    throw ConfigError("config: 'problem' and 'method' blocks are required");

  ExperimentConfig ec;
  ec.raw = j;

  const njson& pj = j.at("problem");
  detail::check_keys(pj, {"kind", "n", "m", "seed", "density", "lips", "mu", "L", "dual"},
                     "problem");
  ec.problem.kind = detail::str_at(pj, "kind", "", "problem");
  if (ec.problem.kind.empty()) throw ConfigError("problem.kind: required");
  ec.problem.n = static_cast<int>(detail::uint_at(pj, "n", 0, "problem"));
  ec.problem.m = static_cast<int>(detail::uint_at(pj, "m", 0, "problem"));
  ec.problem.seed = detail::uint_at(pj, "seed", 0, "problem");
  ec.problem.density = detail::num_at(pj, "density", 0.0, "problem");
  ec.problem.mu = detail::num_at(pj, "mu", 0.0, "problem");
  ec.problem.l = detail::num_at(pj, "L", 0.0, "problem");
  ec.problem.dual = detail::str_at(pj, "dual", "phi1", "problem");
  if (pj.contains("lips")) {
    if (!pj.at("lips").is_array()) throw ConfigError("problem.lips: expected an array");
    for (const auto& e : pj.at("lips")) ec.problem.lips.push_back(e.get<double>());
  }

  const njson& mj = j.at("method");
  detail::check_keys(mj,
                     {"kind", "beta", "iters", "alpha", "tau", "theta", "d", "eps", "sigma",
                      "c_epoch", "mu", "theta0", "delta", "adaptive", "schedule", "epsilon",
                      "step", "n_inner", "batch", "max_epochs", "eval_budget"},
                     "method");
  ec.method.kind = detail::str_at(mj, "kind", "", "method");
  if (ec.method.kind.empty()) throw ConfigError("method.kind: required");
  ec.method.beta = detail::num_at(mj, "beta", 0.0, "method");
  ec.method.iters = detail::uint_at(mj, "iters", 0, "method");
  ec.method.alpha = detail::num_at(mj, "alpha", 0.0, "method");
  ec.method.tau = detail::num_at(mj, "tau", 0.0, "method");
  ec.method.theta = detail::num_at(mj, "theta", 0.0, "method");
  ec.method.d = detail::num_at(mj, "d", 0.0, "method");
  ec.method.eps = detail::num_at(mj, "eps", 0.0, "method");
  ec.method.sigma = detail::num_at(mj, "sigma", 0.1, "method");
  ec.method.c_epoch = detail::num_at(mj, "c_epoch", 9.0, "method");
  ec.method.mu = detail::num_at(mj, "mu", 0.0, "method");
  ec.method.theta0 = detail::num_at(mj, "theta0", 0.0, "method");
  ec.method.delta = detail::num_at(mj, "delta", 0.0, "method");
  ec.method.adaptive = detail::bool_at(mj, "adaptive", false, "method");
  ec.method.schedule = detail::str_at(mj, "schedule", "simple", "method");
  ec.method.epsilon = detail::num_at(mj, "epsilon", 0.0, "method");
  ec.method.step = detail::num_at(mj, "step", 0.0, "method");
  ec.method.n_inner = detail::uint_at(mj, "n_inner", 0, "method");
  ec.method.eval_budget = detail::uint_at(mj, "eval_budget", 0, "method");
  ec.method.batch = static_cast<int>(detail::uint_at(mj, "batch", 1, "method"));
  ec.method.max_epochs = static_cast<int>(detail::uint_at(mj, "max_epochs", 1000, "method"));

  if (j.contains("run")) {
    const njson& rj = j.at("run");
    detail::check_keys(
        rj, {"seeds", "log_stride", "record_timing", "divergence_factor", "trace", "out"},
        "run");
    if (rj.contains("seeds")) ec.run.seeds = detail::parse_seeds(rj.at("seeds"), "run.seeds");
    ec.run.log_stride = detail::uint_at(rj, "log_stride", 0, "run");
    ec.run.record_timing = detail::bool_at(rj, "record_timing", false, "run");
    ec.run.divergence_factor = detail::num_at(rj, "divergence_factor", 1e3, "run");
    ec.run.trace = detail::bool_at(rj, "trace", true, "run");
    ec.run.out_dir = detail::str_at(rj, "out", "", "run");
  } else {
    ec.run.seeds = {0};
  }
  return ec;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  njson j;
  try {
    in >> j;
  } catch (const njson::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return parse_config(j);
}

// ---- problem construction with computable references ----

struct Built {
  std::string kind;
  int dim = 0;
  std::optional<QuadraticProblem> quad;
  std::optional<EntropyLPInstance> lp;
  bool dual_is_phi2 = false;
  std::optional<SeparableObjective> sep;
  std::optional<ProjectionDual> proj;
  std::optional<RidgeSum> ridge;
  std::optional<double> fstar;
  std::optional<vec> xstar;
  double theta_euclid = 0.0;  // certificate scale on entropy duals
  double lambda_max = 0.0;    // full-gradient step constant
};

inline SparseMatrix gen_sparse_matrix(int m, int n, double density, Rng& rng) {
  std::vector<Triplet> trip;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c)
      if (rng.unit() < density) trip.push_back({r, c, rng.uniform(-1.0, 1.0)});
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (const auto& t : trip) seen[static_cast<std::size_t>(t.c)] = true;
  for (int c = 0; c < n; ++c)
    if (!seen[static_cast<std::size_t>(c)]) {
      const int r = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
      const double v = rng.uniform(0.5, 1.0);
      trip.push_back({r, c, rng.unit() < 0.5 ? v : -v});
    }
  return SparseMatrix(m, n, std::move(trip));
}

inline Built build_problem(const ProblemSpec& ps) {
  Built bt;
  bt.kind = ps.kind;
  if (ps.kind == "example2") {
    if (ps.n < 2) throw ConfigError("problem.n: example2 needs n >= 2");
    bt.quad = make_example2(ps.n, ps.seed);
    auto [xs, fs] = bt.quad->solve_reference();
    bt.xstar = xs;
    bt.fstar = fs;
    bt.lambda_max = bt.quad->lambda_max_est;
    bt.dim = ps.n;
  } else if (ps.kind == "chain") {
    if (ps.n < 2) throw ConfigError("problem.n: chain needs n >= 2");
    bt.quad = make_chain_quadratic(ps.n);
    bt.xstar = vec(static_cast<std::size_t>(ps.n), 0.0);
    bt.fstar = 0.0;
    bt.lambda_max = bt.quad->lambda_max_est;
    bt.dim = ps.n;
  } else if (ps.kind == "diag") {
    if (ps.lips.empty()) throw ConfigError("problem.lips: required for diag");
    Rng rng(ps.seed);
    vec b(ps.lips.size());
    for (double& e : b) e = rng.uniform(-1.0, 1.0);
    bt.quad = make_diagonal_quadratic(ps.lips, b);
    auto [xs, fs] = bt.quad->solve_reference();
    bt.xstar = xs;
    bt.fstar = fs;
    bt.lambda_max = bt.quad->lambda_max_est;
    bt.dim = static_cast<int>(ps.lips.size());
  } else if (ps.kind == "entropy_lp") {
    if (ps.n < 2 || ps.m < 1) throw ConfigError("problem: entropy_lp needs n >= 2, m >= 1");
    bt.lp = make_entropy_lp(ps.n, ps.m, ps.seed);
    bt.dual_is_phi2 = ps.dual == "phi2";
    if (ps.dual != "phi1" && ps.dual != "phi2")
      throw ConfigError("problem.dual: expected 'phi1' or 'phi2'");
    PresolveResult pre = newton_presolve_phi1(*bt.lp);
    bt.fstar = pre.phi_value;  // reference for the dual gap column
    bt.xstar = pre.y;
    bt.theta_euclid = norm2_sq(pre.y);
    bt.dim = ps.m;
  } else if (ps.kind == "least_squares") {
    if (ps.n < 1 || ps.m < 1) throw ConfigError("problem: least_squares needs n, m >= 1");
    if (!(ps.density > 0.0) || ps.density > 1.0)
      throw ConfigError("problem.density: expected a value in (0,1]");
    Rng rng(ps.seed);
    SparseMatrix a = gen_sparse_matrix(ps.m, ps.n, ps.density, rng);
    vec b(static_cast<std::size_t>(ps.m));
    for (double& e : b) e = rng.uniform(-1.0, 1.0);
    bt.sep = SeparableObjective::least_squares(std::move(a), std::move(b));
    // numerical reference by ridge-regularized normal equations
    {
      const SparseMatrix& m = bt.sep->matrix();
      const int n = m.cols();
      DenseMat h(n, n);
      for (int c = 0; c < n; ++c) {
        int len;
        auto [rows, vals] = m.col(c, len);
        for (int t = 0; t < len; ++t) {
          int rl;
          auto [cols2, vals2] = m.row(rows[t], rl);
          for (int q = 0; q < rl; ++q) h.at(c, cols2[q]) += vals[t] * vals2[q];
        }
      }
      double scale = 0.0;
      for (int c = 0; c < n; ++c) scale = std::max(scale, h.at(c, c));
      for (int c = 0; c < n; ++c) h.at(c, c) += 1e-10 * (1.0 + scale);
      vec rhs(static_cast<std::size_t>(n), 0.0);
      for (int r = 0; r < m.rows(); ++r) {
        int rl;
        auto [cols2, vals2] = m.row(r, rl);
        for (int q = 0; q < rl; ++q)
          rhs[static_cast<std::size_t>(cols2[q])] +=
              vals2[q] * bt.sep->shift()[static_cast<std::size_t>(r)];
      }
      bt.fstar = bt.sep->value(spd_solve(h, rhs));
    }
    bt.dim = ps.n;
  } else if (ps.kind == "projection") {
    if (ps.n < 1 || ps.m < 1) throw ConfigError("problem: projection needs n, m >= 1");
    if (!(ps.mu > 0.0) || !(ps.l > 0.0)) throw ConfigError("problem: projection needs mu, L > 0");
    Rng rng(ps.seed);
    DenseMat a(ps.m, ps.n);
    for (double& e : a.a) e = rng.uniform(-1.0, 1.0);
    vec x_feas(static_cast<std::size_t>(ps.n));
    for (double& e : x_feas) e = rng.uniform(-1.0, 1.0);
    vec b = matvec(a, x_feas);
    vec x_g(static_cast<std::size_t>(ps.n));
    for (double& e : x_g) e = rng.uniform(-1.0, 1.0);
    bt.proj = make_projection_dual(std::move(a), std::move(b), std::move(x_g), ps.mu, ps.l);
    vec ys = bt.proj->y_star();
    bt.fstar = bt.proj->dual.value(ys);
    bt.xstar = ys;
    bt.lambda_max = bt.proj->dual.lambda_max_est;
    bt.dim = ps.m;
  } else if (ps.kind == "ridge_sum") {
    if (ps.n < 1 || ps.m < 1) throw ConfigError("problem: ridge_sum needs n, m >= 1");
    bt.ridge = make_ridge_sum(ps.m, ps.n, ps.seed);
    auto [xs, fs] = bt.ridge->solve_reference();
    bt.xstar = xs;
    bt.fstar = fs;
    bt.dim = ps.n;
  } else {
    throw ConfigError("problem.kind: unknown kind '" + ps.kind + "'");
  }
  return bt;
}

// ---- single-run execution ----

struct RunOutcome {
  std::uint64_t seed = 0;
  std::string status = "ok";  // ok | diverged | oracle_error
  std::optional<double> final_gap;
  std::uint64_t coord_calls = 0;
  std::uint64_t value_calls = 0;
  std::optional<Certificate> cert;
  std::vector<TraceRecord> trace;
  std::uint64_t elapsed_ns = 0;
  vec point;
};

namespace detail {

inline std::uint64_t derive_iters(const MethodSpec& ms, double n_eff, double theta, double d) {
  if (ms.iters > 0) return ms.iters;
  return static_cast<std::uint64_t>(std::ceil(ms.c_epoch * n_eff * std::sqrt(theta / d)));
}

// accelerated full-gradient reference: every iteration is booked as n
// coordinate calls, which is the arithmetic-work unit the comparisons use
inline RunOutcome nesterov_run(const QuadraticProblem& p, double l_full, std::uint64_t iters,
                               const RunConfig& cfg) {
  if (iters < 1) throw ConfigError("method.iters: full_gradient needs iters >= 1");
  if (!(l_full > 0.0)) throw ConfigError("full_gradient: needs a positive smoothness constant");
  const int n = p.dim();
  RunOutcome out;
  vec x(static_cast<std::size_t>(n), 0.0), y = x;
  double t = 1.0;
  const std::uint64_t stride = accd::detail::stride_for(iters, cfg.log_stride);
  const double f0_scale = 1.0 + std::abs(p.value(x));
  for (std::uint64_t k = 0; k < iters; ++k) {
    vec g = p.gradient(y);
    vec x_new = y;
    for (int j = 0; j < n; ++j) x_new[static_cast<std::size_t>(j)] -= g[static_cast<std::size_t>(j)] / l_full;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    for (int j = 0; j < n; ++j)
      y[static_cast<std::size_t>(j)] =
          x_new[static_cast<std::size_t>(j)] +
          ((t - 1.0) / t_next) * (x_new[static_cast<std::size_t>(j)] - x[static_cast<std::size_t>(j)]);
    x = std::move(x_new);
    t = t_next;
    out.coord_calls += static_cast<std::uint64_t>(n);
    if (cfg.trace_enabled && ((k + 1) % stride == 0 || k + 1 == iters)) {
      const double f = p.value(x);
      TraceRecord row;
      row.run_id = cfg.run_id;
      row.restart = -1;
      row.iteration = k + 1;
      row.coord_calls = out.coord_calls;
      row.gap_or_value = cfg.fstar ? f - *cfg.fstar : f;
      out.trace.push_back(row);
      if (std::abs(f) > cfg.divergence_factor * f0_scale)
        throw DivergenceError("full-gradient baseline diverged", {f});
    }
  }
  out.point = std::move(x);
  return out;
}

template <coord_problem P>
RunOutcome exec_coord(const P& p, const Built& bt, const ExperimentConfig& ec,
                      std::uint64_t seed) {
  const MethodSpec& ms = ec.method;
  const int n = p.dim();
  vec lips(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) lips[static_cast<std::size_t>(i)] = p.lip(i);
  WeightedNorm norm = WeightedNorm::from_lipschitz(lips, ms.beta);
  SamplingTree tree = SamplingTree::from_lipschitz(lips, ms.beta);
  const double n_eff = tree.total();
  vec x0(static_cast<std::size_t>(n), 0.0);

  RunConfig cfg;
  cfg.log_stride = ec.run.log_stride;
  if (bt.fstar) cfg.fstar = *bt.fstar;
  if (bt.xstar && static_cast<int>(bt.xstar->size()) == n) cfg.xstar = *bt.xstar;
  cfg.divergence_factor = ec.run.divergence_factor;
  cfg.adaptive = ms.adaptive;
  cfg.trace_enabled = ec.run.trace;
  cfg.run_id = seed;

  auto theta_or = [&](const char* who) {
    if (ms.theta > 0.0) return ms.theta;
    if (cfg.xstar) return norm.bregman(*cfg.xstar, x0) * 1.25;
    throw ConfigError(std::string("method.theta: required for ") + who +
                      " when no reference minimizer is computable");
  };
  auto d_or = [&](const char* who) {
    if (ms.d > 0.0) return ms.d;
    if (cfg.fstar) return (p.value(x0) - *cfg.fstar) * 1.25;
    throw ConfigError(std::string("method.d: required for ") + who +
                      " when no reference value is computable");
  };

  Rng rng(seed);
  RunOutcome out;

  std::function<vec(const vec&)> payload;
  if (bt.lp && (ms.kind == "acrcd_star" || ms.kind == "acrcd_star_sc")) {
    const EntropyLPInstance* lp = &*bt.lp;
    if (bt.dual_is_phi2)
      payload = [lp](const vec& y) { return lp->recover_phi2(y); };
    else
      payload = [lp](const vec& y) { return lp->recover_phi1(y); };
  }

  if (ms.kind == "acrcd") {
    double alpha = ms.alpha, tau = ms.tau;
    std::uint64_t k_iters = ms.iters;
    if (!(alpha > 0.0)) {
      const double theta = theta_or("acrcd");
      const double d = d_or("acrcd");
      alpha = std::sqrt(theta / d) / n_eff;
      tau = 1.0 / (alpha * n_eff * n_eff + 1.0);
      k_iters = derive_iters(ms, n_eff, theta, d);
    } else if (!(tau > 0.0) || k_iters == 0) {
      throw ConfigError("method: explicit alpha needs explicit tau and iters");
    }
    EpochResult er = acrcd_epoch(p, norm, tree, x0, alpha, tau, k_iters, rng, cfg);
    out.coord_calls = er.state.coord_calls;
    out.value_calls = er.state.value_calls;
    out.trace = std::move(er.state.trace);
    out.point = std::move(er.xbar);
  } else if (ms.kind == "acrcd_star") {
    if (ms.iters == 0) throw ConfigError("method.iters: required for acrcd_star");
    Schedule sched = ms.schedule == "recurrence" ? Schedule::recurrence_for(n_eff)
                                                 : Schedule::simple_for(n_eff);
    if (ms.schedule != "simple" && ms.schedule != "recurrence")
      throw ConfigError("method.schedule: expected 'simple' or 'recurrence'");
    StarResult sr = acrcd_star(p, norm, tree, x0, sched, ms.iters, rng, cfg, payload);
    out.coord_calls = sr.state.coord_calls;
    out.value_calls = sr.state.value_calls;
    if (bt.lp && payload && !bt.dual_is_phi2) {
      const double dual_val = p.value(sr.y_out);
      out.cert = recover_primal(sr.state, *bt.lp, dual_val, bt.theta_euclid).cert;
    }
    out.trace = std::move(sr.state.trace);
    out.point = std::move(sr.y_out);
  } else if (ms.kind == "acrcd_star_sc") {
    if (!(ms.mu > 0.0)) throw ConfigError("method.mu: required for acrcd_star_sc");
    if (!(ms.eps > 0.0)) throw ConfigError("method.eps: required for acrcd_star_sc");
    const double theta0 = ms.theta0 > 0.0 ? ms.theta0 : theta_or("acrcd_star_sc");
    ScResult sc = acrcd_star_strongly_convex(p, norm, tree, x0, ms.mu, ms.eps, theta0,
                                             seed, cfg,
                                             ms.schedule == "recurrence"
                                                 ? Schedule::Kind::recurrence
                                                 : Schedule::Kind::simple);
    out.coord_calls = sc.coord_calls;
    out.value_calls = sc.value_calls;
    out.trace = std::move(sc.trace);
    out.point = std::move(sc.x);
  } else if (ms.kind == "acrcd_restart") {
    if (!(ms.eps > 0.0)) throw ConfigError("method.eps: required for acrcd_restart");
    const double theta = theta_or("acrcd_restart");
    const double d = d_or("acrcd_restart");
    RestartResult rr =
        acrcd_restart(p, norm, tree, x0, theta, d, ms.eps, ms.sigma, ms.c_epoch, seed, cfg);
    out.coord_calls = rr.coord_calls;
    out.value_calls = rr.value_calls;
    out.trace = std::move(rr.trace);
    out.point = std::move(rr.x);
  } else {
    throw ConfigError("method.kind: unknown kind '" + ms.kind + "'");
  }

  const double f_out = p.value(out.point);
  out.final_gap = bt.fstar ? f_out - *bt.fstar : f_out;
  return out;
}

template <coord_problem P>
RunOutcome exec_coord_maybe_inexact(const P& p, const Built& bt, const ExperimentConfig& ec,
                                    std::uint64_t seed) {
  if (ec.method.delta > 0.0) {
    InexactOracle<P> noisy(p, ec.method.delta, mix64(seed ^ 0x6e6f697365ULL));
    return exec_coord(noisy, bt, ec, seed);
  }
  return exec_coord(p, bt, ec, seed);
}

inline RunOutcome exec_prime(const Built& bt, const ExperimentConfig& ec, std::uint64_t seed) {
  if (!bt.sep) throw ConfigError("method: lazy engines need a least_squares problem");
  const MethodSpec& ms = ec.method;
  const SeparableObjective& p = *bt.sep;
  vec lips = p.lipschitz();
  WeightedNorm norm = WeightedNorm::from_lipschitz(lips, ms.beta);
  SamplingTree tree = SamplingTree::from_lipschitz(lips, ms.beta);
  const double n_eff = tree.total();
  vec x0(static_cast<std::size_t>(p.dim()), 0.0);

  RunConfig cfg;
  cfg.log_stride = ec.run.log_stride;
  if (bt.fstar) cfg.fstar = *bt.fstar;
  cfg.divergence_factor = ec.run.divergence_factor;
  cfg.trace_enabled = ec.run.trace;
  cfg.run_id = seed;

  Rng rng(seed);
  RunOutcome out;
  if (ms.kind == "acrcd_prime") {
    double alpha = ms.alpha, tau = ms.tau;
    std::uint64_t k_iters = ms.iters;
    if (!(alpha > 0.0)) {
      if (!(ms.theta > 0.0) || !(ms.d > 0.0))
        throw ConfigError("method: acrcd_prime needs alpha/tau/iters or theta/d");
      alpha = std::sqrt(ms.theta / ms.d) / n_eff;
      tau = 1.0 / (alpha * n_eff * n_eff + 1.0);
      k_iters = derive_iters(ms, n_eff, ms.theta, ms.d);
    } else if (!(tau > 0.0) || k_iters == 0) {
      throw ConfigError("method: explicit alpha needs explicit tau and iters");
    }
    PrimeResult pr = acrcd_prime_run(p, norm, tree, x0, alpha, tau, k_iters, rng, cfg);
    out.coord_calls = pr.state.coord_calls;
    out.value_calls = pr.state.value_calls;
    out.trace = std::move(pr.state.trace);
    out.point = std::move(pr.xbar);
  } else {
    if (ms.iters == 0) throw ConfigError("method.iters: required for acrcd_star_prime");
    StarPrimeResult sr = acrcd_star_prime_run(p, norm, tree, x0, ms.iters, rng, cfg);
    out.coord_calls = sr.state.coord_calls;
    out.value_calls = sr.state.value_calls;
    out.trace = std::move(sr.state.trace);
    out.point = std::move(sr.y_out);
  }
  const double f_out = p.value(out.point);
  out.final_gap = bt.fstar ? f_out - *bt.fstar : f_out;
  return out;
}

inline RunOutcome exec_vr(const Built& bt, const ExperimentConfig& ec, std::uint64_t seed) {
  if (!bt.ridge) throw ConfigError("method: vr needs a ridge_sum problem");
  const MethodSpec& ms = ec.method;
  if (!(ms.epsilon > 0.0)) throw ConfigError("method.epsilon: required for vr");
  VrConfig vc;
  vc.n_inner = ms.n_inner;
  vc.step_size = ms.step;
  vc.batch = ms.batch;
  vc.max_epochs = ms.max_epochs;
  vc.eval_budget = ms.eval_budget;
  vc.run_id = seed;
  Rng rng(seed);
  vec x0(static_cast<std::size_t>(bt.ridge->dim()), 0.0);
  VrDriverResult dr = vr_driver(*bt.ridge, x0, ms.epsilon, rng, vc);
  RunOutcome out;
  out.coord_calls = dr.component_evals;
  out.trace = std::move(dr.trace);
  out.point = std::move(dr.x);
  if (!dr.converged) out.status = "budget_exhausted";
  const double f_out = bt.ridge->value(out.point);
  out.final_gap = bt.fstar ? f_out - *bt.fstar : f_out;
  return out;
}

inline RunOutcome run_one(const Built& bt, const ExperimentConfig& ec, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  RunOutcome out;
  try {
    const std::string& mk = ec.method.kind;
    if (mk == "vr") {
      out = exec_vr(bt, ec, seed);
    } else if (mk == "acrcd_prime" || mk == "acrcd_star_prime") {
      out = exec_prime(bt, ec, seed);
    } else if (mk == "full_gradient") {
      const QuadraticProblem* q = bt.quad ? &*bt.quad : (bt.proj ? &bt.proj->dual : nullptr);
      if (!q) throw ConfigError("method: full_gradient needs a dense quadratic problem");
      RunConfig cfg;
      cfg.log_stride = ec.run.log_stride;
      if (bt.fstar) cfg.fstar = *bt.fstar;
      cfg.divergence_factor = ec.run.divergence_factor;
      cfg.trace_enabled = ec.run.trace;
      cfg.run_id = seed;
      out = nesterov_run(*q, bt.lambda_max, ec.method.iters, cfg);
      const double f_out = q->value(out.point);
      out.final_gap = bt.fstar ? f_out - *bt.fstar : f_out;
    } else if (bt.quad) {
      out = exec_coord_maybe_inexact(*bt.quad, bt, ec, seed);
    } else if (bt.proj) {
      out = exec_coord_maybe_inexact(bt.proj->dual, bt, ec, seed);
    } else if (bt.lp) {
      if (bt.dual_is_phi2) {
        EntropyDual2 d2(*bt.lp);
        if (!ec.method.adaptive)
          throw ConfigError(
              "problem.dual: phi2 has unbounded curvature; set method.adaptive = true");
        out = exec_coord_maybe_inexact(d2, bt, ec, seed);
      } else {
        EntropyDual1 d1(*bt.lp);
        out = exec_coord_maybe_inexact(d1, bt, ec, seed);
      }
    } else if (bt.sep) {
      out = exec_coord_maybe_inexact(*bt.sep, bt, ec, seed);
    } else {
      throw ConfigError("method.kind: no runnable objective for '" + mk + "'");
    }
  } catch (const DivergenceError&) {
    out.status = "diverged";
    out.final_gap.reset();
  } catch (const OracleError&) {
    out.status = "oracle_error";
    out.final_gap.reset();
  }
  out.seed = seed;
  if (ec.run.record_timing) {
    const auto t1 = std::chrono::steady_clock::now();
    out.elapsed_ns =
        static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    if (!out.trace.empty()) out.trace.back().elapsed_ns = out.elapsed_ns;
  }
  return out;
}

}  // namespace detail

struct ExperimentResult {
  std::vector<RunOutcome> runs;  // seed order, deterministic
  std::optional<double> fstar;
};

// Seeds run concurrently up to `workers`; each run owns its rng, sampling
// tree, and trace, so the only shared state is the immutable instance.
// Results land in seed order regardless of completion order.
inline ExperimentResult run_experiment(const ExperimentConfig& ec, int workers = 1) {
  const Built bt = build_problem(ec.problem);
  ExperimentResult res;
  res.fstar = bt.fstar;
  res.runs.resize(ec.run.seeds.size());
  if (ec.run.seeds.empty()) return res;

  const int w = std::max(1, std::min<int>(workers, static_cast<int>(ec.run.seeds.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= ec.run.seeds.size()) return;
      res.runs[i] = detail::run_one(bt, ec, ec.run.seeds[i]);
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < w; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return res;
}

inline std::string summary_csv(const ExperimentResult& res, const ExperimentConfig& ec) {
  std::ostringstream out;
  out << "# accd-summary-v1\n";
  out << "seed,problem,method,status,final_gap,coord_calls,value_calls,"
         "cert_feasibility,cert_gap,cert_theta_scale,elapsed_ns\n";
  for (const auto& r : res.runs) {
    out << r.seed << ',' << ec.problem.kind << ',' << ec.method.kind << ',' << r.status << ',';
    if (r.final_gap) out << format_double(*r.final_gap);
    out << ',' << r.coord_calls << ',' << r.value_calls << ',';
    if (r.cert) {
      out << format_double(r.cert->feasibility) << ',' << format_double(r.cert->gap) << ','
          << format_double(r.cert->theta_scale);
    } else {
      out << ",,";
    }
    out << ',' << r.elapsed_ns << '\n';
  }
  return out.str();
}

// Writes trace_seed<seed>.csv per run (when tracing) plus summary.csv.
inline std::vector<std::string> write_outputs(const ExperimentResult& res,
                                              const ExperimentConfig& ec,
                                              const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  if (ec.run.trace) {
    for (const auto& r : res.runs) {
      const std::string path = out_dir + "/trace_seed" + std::to_string(r.seed) + ".csv";
      std::ofstream f(path, std::ios::binary);
      if (!f) throw ConfigError("cannot write '" + path + "'");
      write_trace_csv(f, r.trace);
      written.push_back(path);
    }
  }
  const std::string spath = out_dir + "/summary.csv";
  std::ofstream sf(spath, std::ios::binary);
  if (!sf) throw ConfigError("cannot write '" + spath + "'");
  sf << summary_csv(res, ec);
  written.push_back(spath);
  return written;
}

// ---- comparisons ----

struct CompareRow {
  double threshold;
  double median_calls_a;  // +inf when the median run never crosses
  double median_calls_b;
  double ratio_a_over_b;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline std::vector<double> crossing_calls(const ExperimentResult& res, double threshold) {
  std::vector<double> out;
  for (const auto& r : res.runs) {
    double calls = std::numeric_limits<double>::infinity();
    for (const auto& row : r.trace)
      if (row.gap_or_value <= threshold) {
        calls = static_cast<double>(row.coord_calls);
        break;
      }
    out.push_back(calls);
  }
  return out;
}

}  // namespace detail

inline std::vector<CompareRow> compare(const ExperimentConfig& a, const ExperimentConfig& b,
                                       int workers = 1) {
  if (a.raw.at("problem") != b.raw.at("problem"))
    throw ConfigError("compare: the two configurations must share the problem block");
  ExperimentResult ra = run_experiment(a, workers);
  ExperimentResult rb = run_experiment(b, workers);
  if (!ra.fstar)
    throw ConfigError("compare: the problem kind has no computable reference value");
  std::vector<CompareRow> rows;
  for (double thr : {1e-2, 1e-4, 1e-6}) {
    CompareRow row;
    row.threshold = thr;
    row.median_calls_a = detail::median_of(detail::crossing_calls(ra, thr));
    row.median_calls_b = detail::median_of(detail::crossing_calls(rb, thr));
    row.ratio_a_over_b = row.median_calls_a / row.median_calls_b;
    rows.push_back(row);
  }
  return rows;
}

inline std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream out;
  out << "# accd-compare-v1\n";
  out << "threshold,median_calls_a,median_calls_b,ratio_a_over_b\n";
  for (const auto& r : rows) {
    out << format_double(r.threshold) << ',' << format_double(r.median_calls_a) << ','
        << format_double(r.median_calls_b) << ',';
    // both medians infinite leaves the ratio undefined; emit an empty cell
    if (!std::isnan(r.ratio_a_over_b)) out << format_double(r.ratio_a_over_b);
    out << '\n';
  }
  return out.str();
}

// ---- trace reading and rate fitting ----

inline std::vector<TraceRecord> read_trace_csv(std::istream& in) {
  std::vector<TraceRecord> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("run_id", 0) == 0) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ls, field, ',')) f.push_back(field);
    while (f.size() < 8) f.push_back("");
    TraceRecord r;
    r.run_id = std::stoull(f[0]);
    r.restart = std::stoll(f[1]);
    r.iteration = std::stoull(f[2]);
    r.coord_calls = std::stoull(f[3]);
    r.value_calls = std::stoull(f[4]);
    r.gap_or_value = std::stod(f[5]);
    if (!f[6].empty()) r.half_dist_sq = std::stod(f[6]);
    r.elapsed_ns = f[7].empty() ? 0 : std::stoull(f[7]);
    rows.push_back(r);
  }
  return rows;
}

// Least-squares slope of log(mean gap) against log(iteration) over the
// window [k_lo, k_hi].  Gaps are averaged across files at equal iteration
// numbers first, so a seed sweep with a shared stride feeds one point per
// logged iteration.
inline double fit_slope(const std::vector<std::vector<TraceRecord>>& traces, double k_lo,
                        double k_hi) {
  std::vector<std::pair<std::uint64_t, std::pair<double, int>>> acc;  // sorted by iteration
  auto bump = [&](std::uint64_t k, double gap) {
    auto it = std::lower_bound(acc.begin(), acc.end(), k,
                               [](const auto& e, std::uint64_t key) { return e.first < key; });
    if (it == acc.end() || it->first != k) it = acc.insert(it, {k, {0.0, 0}});
    it->second.first += gap;
    it->second.second += 1;
  };
  for (const auto& rows : traces)
    for (const auto& r : rows)
      if (static_cast<double>(r.iteration) >= k_lo && static_cast<double>(r.iteration) <= k_hi)
        bump(r.iteration, r.gap_or_value);
  std::vector<double> xs, ys;
  for (const auto& e : acc) {
    const double mean = e.second.first / e.second.second;
    if (mean > 0.0) {
      xs.push_back(std::log(static_cast<double>(e.first)));
      ys.push_back(std::log(mean));
    }
  }
  if (xs.size() < 20)
    throw ContractError("fit_slope: need at least 20 positive mean-gap points in the window");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= xs.size();
  my /= ys.size();
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) throw ContractError("fit_slope: degenerate iteration window");
  return sxy / sxx;
}

inline double fit_slope_files(const std::vector<std::string>& paths, double k_lo, double k_hi) {
  std::vector<std::vector<TraceRecord>> traces;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw ConfigError("fit_slope: cannot open '" + p + "'");
    traces.push_back(read_trace_csv(in));
  }
  return fit_slope(traces, k_lo, k_hi);
}

// ---- instance serialization ----

inline njson dense_rows(const DenseMat& m) {
  njson rows = njson::array();
  for (int r = 0; r < m.rows; ++r) {
    njson row = njson::array();
    for (int c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
    rows.push_back(row);
  }
  return rows;
}

// Self-contained instance dump: the generator coordinates plus the explicit
// data they expand to, so a consumer needs neither this library nor its rng.
inline njson gen_instance(const ProblemSpec& ps) {
  Built bt = build_problem(ps);
  njson j;
  j["schema"] = "accd-instance-v1";
  njson spec;
  spec["kind"] = ps.kind;
  spec["n"] = ps.n;
  spec["m"] = ps.m;
  spec["seed"] = ps.seed;
  if (ps.density > 0.0) spec["density"] = ps.density;
  if (!ps.lips.empty()) spec["lips"] = ps.lips;
  if (ps.mu > 0.0) spec["mu"] = ps.mu;
  if (ps.l > 0.0) spec["L"] = ps.l;
  if (ps.kind == "entropy_lp") spec["dual"] = ps.dual;
  j["generator"] = spec;

  njson data;
  if (bt.quad) {
    data["s"] = dense_rows(bt.quad->s);
    data["b"] = bt.quad->b;
    data["lambda_max_est"] = bt.quad->lambda_max_est;
    data["ridge_added"] = bt.quad->ridge_added;
  } else if (bt.lp) {
    data["a"] = dense_rows(bt.lp->a);
    data["b"] = bt.lp->b;
    data["x_hat"] = bt.lp->x_hat;
  } else if (bt.sep) {
    const SparseMatrix& m = bt.sep->matrix();
    njson trip = njson::array();
    for (const auto& t : m.triplets()) trip.push_back({t.r, t.c, t.v});
    data["matrix"] = {{"m", m.rows()}, {"n", m.cols()}, {"triplets", trip}};
    data["b"] = bt.sep->shift();
  } else if (bt.proj) {
    data["a"] = dense_rows(bt.proj->a);
    data["b"] = bt.proj->rhs;
    data["x_g"] = bt.proj->x_g;
    data["mu"] = bt.proj->mu;
    data["L"] = bt.proj->reg_l;
  } else if (bt.ridge) {
    data["a"] = dense_rows(bt.ridge->data());
    data["targets"] = bt.ridge->targets();
    data["lambda"] = bt.ridge->strong_convexity();
  }
  if (bt.fstar) data["reference_value"] = *bt.fstar;
  j["data"] = data;
  return j;
}

}  // namespace accd::bench
