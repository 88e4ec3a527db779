#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "accd/coupling.hpp"
#include "accd/sparse.hpp"
#include "accd/sparse_engine.hpp"

using namespace accd;

static_assert(coord_problem<SeparableObjective>);

namespace {

SparseMatrix random_sparse(int m, int n, double density, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Triplet> trip;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c)
      if (rng.unit() < density) trip.push_back({r, c, rng.uniform(-1.0, 1.0)});
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (const auto& t : trip) seen[static_cast<std::size_t>(t.c)] = true;
  for (int c = 0; c < n; ++c)
    if (!seen[static_cast<std::size_t>(c)])
      trip.push_back({static_cast<int>(rng.below(static_cast<std::uint64_t>(m))), c, 1.0});
  return SparseMatrix(m, n, std::move(trip));
}

SeparableObjective random_least_squares(int m, int n, double density, std::uint64_t seed) {
  SparseMatrix a = random_sparse(m, n, density, seed);
  Rng rng(seed ^ 0xb0b);
  vec b(static_cast<std::size_t>(m));
  for (auto& e : b) e = rng.uniform(-1.0, 1.0);
  return SeparableObjective::least_squares(std::move(a), std::move(b));
}

double max_abs_diff(const vec& a, const vec& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  return worst;
}

}  // namespace

TEST_CASE("sparse matrix stores both walk orders", "[sparse]") {
  // [ 1 0 2 ]
  // [ 0 3 0 ]
  SparseMatrix a(2, 3, {{0, 2, 2.0}, {1, 1, 3.0}, {0, 0, 1.0}});
  CHECK(a.rows() == 2);
  CHECK(a.cols() == 3);
  CHECK(a.nnz() == 3);

  int len;
  auto [cols0, vals0] = a.row(0, len);
  REQUIRE(len == 2);
  CHECK(cols0[0] == 0);
  CHECK(cols0[1] == 2);
  CHECK(vals0[0] == 1.0);
  CHECK(vals0[1] == 2.0);

  auto [rows1, cvals1] = a.col(1, len);
  REQUIRE(len == 1);
  CHECK(rows1[0] == 1);
  CHECK(cvals1[0] == 3.0);
  CHECK(a.col_nnz(0) == 1);
  CHECK(a.col_nnz(2) == 1);

  vec y = a.multiply({1.0, 1.0, 1.0});
  CHECK(y == vec{3.0, 3.0});

  SparseMatrix at = a.transpose();
  CHECK(at.rows() == 3);
  CHECK(at.cols() == 2);
  auto [tc, tv] = at.row(2, len);
  REQUIRE(len == 1);
  CHECK(tc[0] == 0);
  CHECK(tv[0] == 2.0);
}

TEST_CASE("sparse matrix rejects malformed triplets", "[sparse]") {
  CHECK_THROWS_AS(SparseMatrix(2, 2, {{2, 0, 1.0}}), ContractError);
  CHECK_THROWS_AS(SparseMatrix(2, 2, {{0, -1, 1.0}}), ContractError);
  CHECK_THROWS_AS(SparseMatrix(2, 2, {{0, 0, 1.0}, {0, 0, 2.0}}), ContractError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(SparseMatrix(2, 2, {{0, 0, nan}}), ContractError);
  CHECK_THROWS_AS(SparseMatrix(0, 2, {}), ContractError);
}

TEST_CASE("matrix market round trip preserves values exactly", "[sparse]") {
  SparseMatrix a = random_sparse(6, 9, 0.3, 4);
  std::stringstream buf;
  a.write_matrix_market(buf);
  SparseMatrix back = SparseMatrix::read_matrix_market(buf);
  REQUIRE(back.rows() == a.rows());
  REQUIRE(back.cols() == a.cols());
  REQUIRE(back.nnz() == a.nnz());
  const auto& ta = a.triplets();
  const auto& tb = back.triplets();
  for (std::size_t q = 0; q < ta.size(); ++q) {
    CHECK(ta[q].r == tb[q].r);
    CHECK(ta[q].c == tb[q].c);
    CHECK(ta[q].v == tb[q].v);  // shortest round-trip formatting is lossless
  }

  std::stringstream bad1("%%MatrixMarket matrix array real general\n2 2 1\n1 1 1.0\n");
  CHECK_THROWS_AS(SparseMatrix::read_matrix_market(bad1), ContractError);
  std::stringstream bad2("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n");
  CHECK_THROWS_AS(SparseMatrix::read_matrix_market(bad2), ContractError);
  std::stringstream bad3("not a header\n");
  CHECK_THROWS_AS(SparseMatrix::read_matrix_market(bad3), ContractError);
}

TEST_CASE("binary round trip is bit exact and guards truncation", "[sparse]") {
  SparseMatrix a = random_sparse(5, 7, 0.4, 9);
  std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
  a.write_binary(buf);
  const std::string bytes = buf.str();
  SparseMatrix back = SparseMatrix::read_binary(buf);
  REQUIRE(back.nnz() == a.nnz());
  const auto& ta = a.triplets();
  const auto& tb = back.triplets();
  for (std::size_t q = 0; q < ta.size(); ++q) {
    CHECK(ta[q].r == tb[q].r);
    CHECK(ta[q].c == tb[q].c);
    CHECK(ta[q].v == tb[q].v);
  }

  std::stringstream cut(bytes.substr(0, bytes.size() - 3),
                        std::ios::in | std::ios::binary);
  CHECK_THROWS_AS(SparseMatrix::read_binary(cut), ContractError);
  std::stringstream extra(bytes + "x", std::ios::in | std::ios::binary);
  CHECK_THROWS_AS(SparseMatrix::read_binary(extra), ContractError);
}

TEST_CASE("separable objective matches the dense least-squares formulas", "[sparse_engine]") {
  auto p = random_least_squares(7, 5, 0.5, 11);
  const SparseMatrix& a = p.matrix();
  Rng rng(2);
  vec x(5);
  for (auto& e : x) e = rng.uniform(-2.0, 2.0);

  // f(x) = (1/2) sum_r (a_r^T x - b_r)^2 via an independent dense pass
  vec r(static_cast<std::size_t>(a.rows()), 0.0);
  for (const auto& t : a.triplets()) r[static_cast<std::size_t>(t.r)] += t.v * x[static_cast<std::size_t>(t.c)];
  double f_ref = 0.0;
  for (int q = 0; q < a.rows(); ++q) {
    const double d = r[static_cast<std::size_t>(q)] - p.shift()[static_cast<std::size_t>(q)];
    f_ref += 0.5 * d * d;
  }
  CHECK_THAT(p.value(x), Catch::Matchers::WithinRel(f_ref, 1e-12));

  for (int i = 0; i < 5; ++i) {
    double g_ref = 0.0;
    for (const auto& t : a.triplets())
      if (t.c == i)
        g_ref += t.v * (r[static_cast<std::size_t>(t.r)] - p.shift()[static_cast<std::size_t>(t.r)]);
    CHECK_THAT(p.partial(i, x), Catch::Matchers::WithinAbs(g_ref, 1e-12));

    double col_sq = 0.0;
    for (const auto& t : a.triplets())
      if (t.c == i) col_sq += t.v * t.v;
    CHECK(p.lip(i) == col_sq);  // curvature 1 times the exact column norm
  }
  CHECK(fd_check(p, x) <= 1e-6);
}

TEST_CASE("softplus rows are stable at extreme arguments", "[sparse_engine]") {
  SparseMatrix a(2, 2, {{0, 0, 1.0}, {1, 1, 1.0}});
  SeparableObjective p(std::move(a), PhiKind::softplus);
  CHECK(p.lip(0) == 0.25);

  vec big{800.0, -800.0};
  const double f = p.value(big);
  CHECK(std::isfinite(f));
  CHECK_THAT(f, Catch::Matchers::WithinRel(800.0, 1e-12));  // softplus(800) ~ 800, softplus(-800) ~ 0
  const double g_hi = p.partial(0, big);
  const double g_lo = p.partial(1, big);
  CHECK(g_hi > 0.0);
  CHECK(g_hi <= 1.0);
  CHECK(g_lo >= 0.0);
  CHECK(g_lo < 1e-300);
  vec mid{0.3, -0.7};
  CHECK(fd_check(p, mid) <= 1e-6);
}

TEST_CASE("exponential rows demand constants and guard overflow", "[sparse_engine]") {
  CHECK_THROWS_AS(SeparableObjective(SparseMatrix(1, 1, {{0, 0, 1.0}}), PhiKind::exp_shifted),
                  ContractError);
  SeparableObjective p(SparseMatrix(1, 1, {{0, 0, 1.0}}), PhiKind::exp_shifted, {}, {}, {2.0});
  CHECK(p.lip(0) == 2.0);
  CHECK_THAT(p.value({1.0}), Catch::Matchers::WithinRel(std::exp(1.0), 1e-13));
  CHECK_THROWS_AS(p.value({701.0}), OracleError);
  vec mid{0.4};
  CHECK(fd_check(p, mid) <= 1e-6);
}

TEST_CASE("empty columns are rejected when constants are derived", "[sparse_engine]") {
  // column 1 of a 2x2 with a single entry is empty
  std::vector<Triplet> trip{{0, 0, 1.0}, {1, 0, 2.0}};
  CHECK_THROWS_AS(SeparableObjective(SparseMatrix(2, 2, trip), PhiKind::squared_residual),
                  ContractError);
}

TEST_CASE("closed-form schedule products match their iterative definitions",
          "[sparse_engine][schedule]") {
  // prod_{j=1..k} (1 - 2/(j+2)) = 2/((k+1)(k+2));  sum_{j=1..k} tau_j/prod_j = k(k+3)/2
  double prod = 1.0, sum = 0.0;
  std::uint64_t next_check = 10;
  for (std::uint64_t j = 1; j <= 1000000; ++j) {
    const double tau = 2.0 / static_cast<double>(j + 2);
    prod *= 1.0 - tau;
    sum += tau / prod;
    if (j == next_check) {
      const double kd = static_cast<double>(j);
      const double closed_prod = 2.0 / ((kd + 1.0) * (kd + 2.0));
      const double closed_sum = 0.5 * kd * (kd + 3.0);
      CHECK_THAT(prod, Catch::Matchers::WithinRel(closed_prod, 1e-12));
      CHECK_THAT(sum, Catch::Matchers::WithinRel(closed_sum, 1e-12));
      next_check *= 10;
    }
  }
}

TEST_CASE("averaged output assembles to the start when nothing moves", "[sparse_engine]") {
  const vec lips{1.0, 2.0};
  const vec x0{3.0, -1.0};

  // K = 1: the single entry carries coefficient zero by construction
  std::vector<ContributionEntry> one{{1, 0, 0.7}};
  vec xbar = assemble_average(one, 0.05, 0.25, 1, lips, 0.0, x0);
  CHECK(xbar == x0);

  // zero gradients: every coefficient vanishes regardless of K
  std::vector<ContributionEntry> flat{{1, 0, 0.0}, {2, 1, 0.0}, {3, 0, 0.0}};
  xbar = assemble_average(flat, 0.05, 0.25, 3, lips, 0.0, x0);
  CHECK(xbar == x0);

  CHECK_THROWS_AS(assemble_average(flat, 0.05, 0.25, 2, lips, 0.0, x0), ContractError);
  std::vector<ContributionEntry> disorder{{2, 0, 0.0}, {1, 1, 0.0}};
  CHECK_THROWS_AS(assemble_average(disorder, 0.05, 0.25, 2, lips, 0.0, x0), ContractError);
  CHECK_THROWS_AS(assemble_average(one, 0.05, 1.0, 1, lips, 0.0, x0), ContractError);
}

TEST_CASE("lazy fixed-step run tracks the generic loop", "[sparse_engine][slow]") {
  auto p = random_least_squares(20, 30, 0.2, 31);
  const vec& lips = p.lipschitz();
  const double beta = 0.0;
  vec x0(30, 0.0);
  const double alpha = 0.02, tau = 0.05;
  const std::uint64_t K = 5000;

  RunConfig cfg;
  cfg.trace_enabled = false;

  // generic run with the coupling points captured through the payload hook
  std::vector<vec> dense_points;
  auto recorder = [&](const vec& x) {
    dense_points.push_back(x);
    return x;
  };
  auto norm_d = WeightedNorm::from_lipschitz(lips, beta);
  auto tree_d = SamplingTree::from_lipschitz(lips, beta);
  Rng rng_d(404);
  CouplingState dense = run_coupled_loop(p, norm_d, tree_d, x0,
                                         Schedule::fixed_of(alpha, tau, tree_d.total()), K,
                                         rng_d, cfg, /*unit_average=*/true, recorder);

  auto norm_l = WeightedNorm::from_lipschitz(lips, beta);
  auto tree_l = SamplingTree::from_lipschitz(lips, beta);
  Rng rng_l(404);
  PrimeResult lazy = acrcd_prime_run(p, norm_l, tree_l, x0, alpha, tau, K, rng_l, cfg,
                                     /*snapshot_stride=*/1);

  // identical draw sequences: the contribution log must show the same coordinates
  REQUIRE(lazy.state.log.size() == K);
  REQUIRE(dense_points.size() == K);
  REQUIRE(lazy.state.snapshots.size() == K);

  double worst = 0.0;
  for (std::uint64_t k = 0; k < K; ++k) {
    const auto& snap = lazy.state.snapshots[static_cast<std::size_t>(k)];
    CHECK(snap.first == k + 1);
    worst = std::max(worst, max_abs_diff(snap.second, dense_points[static_cast<std::size_t>(k)]));
  }
  INFO("max coupling-point deviation " << worst);
  CHECK(worst <= 1e-8);

  // final coupling point and averaged output
  CHECK(max_abs_diff(lazy.x_final, dense.x) <= 1e-8);
  vec dense_xbar = dense.avg_accum;
  for (auto& e : dense_xbar) e /= dense.avg_weight;
  CHECK(max_abs_diff(lazy.xbar, dense_xbar) <= 1e-8);

  // cost accounting is exact: column entries per step plus rebase flattening
  std::uint64_t expect_entries = 0;
  for (const auto& e : lazy.state.log)
    expect_entries += static_cast<std::uint64_t>(p.matrix().col_nnz(e.i));
  expect_entries += lazy.state.rebases * static_cast<std::uint64_t>(30 + 20);
  CHECK(lazy.state.entries_touched == expect_entries);
  CHECK(lazy.state.coord_calls == K);
  CHECK(lazy.state.tree_visits == 5 * K);  // 30 leaves pad to 32: five levels per draw
  CHECK(lazy.state.rebases > 0);

  // the average per-iteration touch stays within the column-size budget
  const double nnz_per_col = static_cast<double>(p.matrix().nnz()) / 30.0;
  const double step_entries =
      static_cast<double>(lazy.state.entries_touched -
                          lazy.state.rebases * static_cast<std::uint64_t>(50));
  CHECK(step_entries <= 1.2 * static_cast<double>(K) * nnz_per_col);

  // cached products remain consistent with their definitions
  vec au_ref = p.matrix().multiply(lazy.state.u);
  CHECK(max_abs_diff(lazy.state.au, au_ref) <= 1e-9);
}

TEST_CASE("lazy fixed-step run rejects what it cannot represent", "[sparse_engine]") {
  auto p = random_least_squares(4, 4, 0.6, 5);
  auto norm = WeightedNorm::from_lipschitz(p.lipschitz(), 0.0);
  auto tree = SamplingTree::from_lipschitz(p.lipschitz(), 0.0);
  vec x0(4, 0.0);
  Rng rng(1);
  CHECK_THROWS_AS(acrcd_prime_run(p, norm, tree, x0, 0.1, 1.0, 5, rng), ContractError);
  CHECK_THROWS_AS(acrcd_prime_run(p, norm, tree, x0, 0.1, 0.0, 5, rng), ContractError);
  CHECK_THROWS_AS(acrcd_prime_run(p, norm, tree, x0, -0.1, 0.5, 5, rng), ContractError);
  RunConfig adaptive_cfg;
  adaptive_cfg.adaptive = true;
  CHECK_THROWS_AS(acrcd_prime_run(p, norm, tree, x0, 0.1, 0.5, 5, rng, adaptive_cfg),
                  ConfigError);
}

TEST_CASE("lazy varying-step run matches the generic star step for N = 1",
          "[sparse_engine]") {
  auto p = random_least_squares(6, 8, 0.4, 77);
  const vec& lips = p.lipschitz();
  vec x0(8);
  Rng xr(3);
  for (auto& e : x0) e = xr.uniform(-1.0, 1.0);

  RunConfig cfg;
  cfg.trace_enabled = false;
  auto norm_d = WeightedNorm::from_lipschitz(lips, 0.5);
  auto tree_d = SamplingTree::from_lipschitz(lips, 0.5);
  Rng rng_d(88);
  StarResult dense = acrcd_star(p, norm_d, tree_d, x0,
                                Schedule::simple_for(tree_d.total()), 1, rng_d, cfg);

  auto norm_l = WeightedNorm::from_lipschitz(lips, 0.5);
  auto tree_l = SamplingTree::from_lipschitz(lips, 0.5);
  Rng rng_l(88);
  StarPrimeResult lazy = acrcd_star_prime_run(p, norm_l, tree_l, x0, 1, rng_l, cfg);

  // single-step outputs agree bitwise: both evaluate the same row dots at x0
  CHECK(lazy.y_out == dense.y_out);
  CHECK(lazy.x_final == x0);  // x_1 is the starting point
}

TEST_CASE("lazy varying-step run tracks the generic loop", "[sparse_engine][slow]") {
  auto p = random_least_squares(50, 200, 0.05, 57);
  const vec& lips = p.lipschitz();
  const double beta = 0.5;
  vec x0(200, 0.0);
  const std::uint64_t N = 20000;

  RunConfig cfg;
  cfg.trace_enabled = false;

  // capture only the iterations the lazy run snapshots, to keep memory flat
  std::vector<std::pair<std::uint64_t, vec>> dense_points;
  std::uint64_t call_k = 0;
  auto recorder = [&](const vec& x) {
    if (call_k % 997 == 0 || call_k + 1 == N) dense_points.emplace_back(call_k + 1, x);
    ++call_k;
    return x;
  };
  auto norm_d = WeightedNorm::from_lipschitz(lips, beta);
  auto tree_d = SamplingTree::from_lipschitz(lips, beta);
  Rng rng_d(9001);
  CouplingState dense = run_coupled_loop(p, norm_d, tree_d, x0,
                                         Schedule::simple_for(tree_d.total()), N, rng_d, cfg,
                                         /*unit_average=*/false, recorder);

  auto norm_l = WeightedNorm::from_lipschitz(lips, beta);
  auto tree_l = SamplingTree::from_lipschitz(lips, beta);
  Rng rng_l(9001);
  StarPrimeResult lazy =
      acrcd_star_prime_run(p, norm_l, tree_l, x0, N, rng_l, cfg, /*snapshot_stride=*/997);

  REQUIRE(lazy.state.snapshots.size() == dense_points.size());
  double worst = 0.0;
  for (std::size_t q = 0; q < lazy.state.snapshots.size(); ++q) {
    CHECK(lazy.state.snapshots[q].first == dense_points[q].first);
    worst = std::max(worst, max_abs_diff(lazy.state.snapshots[q].second, dense_points[q].second));
  }
  INFO("max coupling-point deviation " << worst);
  CHECK(worst <= 1e-7);
  CHECK(max_abs_diff(lazy.y_out, dense.y) <= 1e-7);

  // per-step work: column entries plus a logarithmic tree walk
  std::uint64_t expect_entries = 0;
  for (const auto& e : lazy.state.log)
    expect_entries += static_cast<std::uint64_t>(p.matrix().col_nnz(e.i));
  CHECK(lazy.state.entries_touched == expect_entries);
  CHECK(lazy.state.rebases == 0);  // polynomial scalars, no flattening needed
  CHECK(lazy.state.tree_visits == 8 * N);  // 200 leaves pad to 256: eight levels
}

TEST_CASE("lazy varying-step trace matches the generic trace", "[sparse_engine]") {
  auto p = random_least_squares(10, 12, 0.4, 13);
  const vec& lips = p.lipschitz();
  vec x0(12, 0.0);
  const std::uint64_t N = 400;

  RunConfig cfg;
  cfg.log_stride = 50;
  cfg.fstar = 0.0;  // report raw values in the gap column

  auto norm_d = WeightedNorm::from_lipschitz(lips, 0.0);
  auto tree_d = SamplingTree::from_lipschitz(lips, 0.0);
  Rng rng_d(5);
  StarResult dense =
      acrcd_star(p, norm_d, tree_d, x0, Schedule::simple_for(tree_d.total()), N, rng_d, cfg);

  auto norm_l = WeightedNorm::from_lipschitz(lips, 0.0);
  auto tree_l = SamplingTree::from_lipschitz(lips, 0.0);
  Rng rng_l(5);
  StarPrimeResult lazy = acrcd_star_prime_run(p, norm_l, tree_l, x0, N, rng_l, cfg);

  REQUIRE(lazy.state.trace.size() == dense.state.trace.size());
  for (std::size_t t = 0; t < lazy.state.trace.size(); ++t) {
    const auto& a = lazy.state.trace[t];
    const auto& b = dense.state.trace[t];
    CHECK(a.iteration == b.iteration);
    CHECK(a.coord_calls == b.coord_calls);
    CHECK_THAT(a.gap_or_value, Catch::Matchers::WithinAbs(b.gap_or_value, 1e-9));
  }
}
