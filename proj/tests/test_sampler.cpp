#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "accd/rng.hpp"
#include "accd/sampler.hpp"

using namespace accd;

namespace {

// reference selection: smallest leaf whose half-open prefix interval holds u,
// skipping zero-weight leaves (their interval is empty)
int linear_find(const std::vector<double>& w, double u) {
  double acc = 0.0;
  int last_positive = -1;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > 0.0) last_positive = static_cast<int>(i);
    acc += w[i];
    if (u < acc && w[i] > 0.0) return static_cast<int>(i);
  }
  return last_positive;  // u at the top boundary from rounding
}

}  // namespace

TEST_CASE("tree totals and leaf bookkeeping", "[sampler]") {
  const std::vector<double> w{1.0, 2.0, 3.0, 4.0, 5.0};
  SamplingTree t(w);
  CHECK(t.size() == 5);
  CHECK(t.total() == 15.0);
  for (int i = 0; i < 5; ++i) {
    CHECK(t.weight(i) == w[static_cast<std::size_t>(i)]);
    CHECK(t.probability(i) == w[static_cast<std::size_t>(i)] / 15.0);
  }
}

TEST_CASE("find uses half-open leaf intervals", "[sampler]") {
  SamplingTree t({1.0, 2.0, 3.0, 4.0, 5.0});
  // intervals: [0,1) [1,3) [3,6) [6,10) [10,15)
  CHECK(t.find(0.0) == 0);
  CHECK(t.find(0.999) == 0);
  CHECK(t.find(1.0) == 1);
  CHECK(t.find(2.999) == 1);
  CHECK(t.find(3.0) == 2);
  CHECK(t.find(6.0) == 3);
  CHECK(t.find(10.0) == 4);
  CHECK(t.find(14.999) == 4);
  CHECK_THROWS_AS(t.find(15.0), ContractError);
  CHECK_THROWS_AS(t.find(-1e-9), ContractError);
}

TEST_CASE("zero-weight leaves are unreachable", "[sampler]") {
  SamplingTree t({1.0, 0.0, 2.0});
  CHECK(t.find(0.5) == 0);
  CHECK(t.find(1.0) == 2);  // the boundary skips the empty interval
  CHECK(t.find(2.9) == 2);
  Rng rng(11);
  for (int k = 0; k < 10000; ++k) CHECK(t.draw(rng) != 1);

  CHECK_THROWS_AS(SamplingTree(std::vector<double>{0.0, 0.0}), ContractError);
  CHECK_THROWS_AS(SamplingTree(std::vector<double>{}), ContractError);
  CHECK_THROWS_AS(SamplingTree(std::vector<double>{-1.0, 2.0}), ContractError);
}

TEST_CASE("tree agrees with a linear scan on shared variates", "[sampler]") {
  // dyadic weights keep every partial sum exact, so both selection rules
  // compute in exact arithmetic and must agree everywhere
  Rng wrng(21);
  std::vector<double> w(37);
  for (auto& e : w) e = static_cast<double>(wrng.below(16)) / 8.0;  // may include zeros
  w[0] = 1.0;  // keep the total positive
  SamplingTree t(w);

  Rng urng(22);
  for (int k = 0; k < 10000; ++k) {
    const double u = urng.unit() * t.total();
    REQUIRE(t.find(u) == linear_find(w, u));
  }
}

TEST_CASE("draw frequencies match the weight law within 4 standard deviations", "[sampler]") {
  const int n = 16;
  vec lips(n);
  for (int i = 0; i < n; ++i) lips[static_cast<std::size_t>(i)] = static_cast<double>(i + 1);

  for (double beta : {0.0, 0.5, 1.0}) {
    SamplingTree t = SamplingTree::from_lipschitz(lips, beta);
    const int draws = 50000;
    std::vector<int> count(n, 0);
    Rng rng(static_cast<std::uint64_t>(1000.0 * beta) + 5);
    for (int k = 0; k < draws; ++k) ++count[static_cast<std::size_t>(t.draw(rng))];
    for (int i = 0; i < n; ++i) {
      const double p = t.probability(i);
      const double mean = draws * p;
      const double sd = std::sqrt(draws * p * (1.0 - p));
      INFO("beta=" << beta << " i=" << i << " count=" << count[static_cast<std::size_t>(i)]
                   << " mean=" << mean << " sd=" << sd);
      CHECK(std::abs(count[static_cast<std::size_t>(i)] - mean) <= 4.0 * sd);
    }
  }
}

TEST_CASE("beta zero collapses to the uniform law", "[sampler]") {
  vec lips{100.0, 1.0, 7.0, 0.5};
  SamplingTree t = SamplingTree::from_lipschitz(lips, 0.0);
  for (int i = 0; i < 4; ++i) CHECK(t.probability(i) == 0.25);
  SamplingTree t1 = SamplingTree::from_lipschitz(lips, 1.0);
  CHECK(t1.total() == 108.5);
  CHECK(t1.weight(0) == 100.0);
  CHECK_THROWS_AS(SamplingTree::from_lipschitz(lips, 2.0), ContractError);
  CHECK_THROWS_AS(SamplingTree::from_lipschitz({0.0}, 0.5), ContractError);
}

TEST_CASE("update_weight repairs every ancestor sum exactly", "[sampler]") {
  std::vector<double> w{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  SamplingTree t(w);
  t.update_weight(2, 10.0);
  t.update_weight(5, 0.0);
  CHECK(t.weight(2) == 10.0);
  CHECK(t.weight(5) == 0.0);
  CHECK(t.total() == 22.0);
  // every internal node equals the sum of its children, exactly
  for (int j = 1; j < t.internal_nodes(); ++j)
    CHECK(t.node_value(j) == t.node_value(2 * j) + t.node_value(2 * j + 1));

  Rng rng(4);
  for (int k = 0; k < 5000; ++k) CHECK(t.draw(rng) != 5);

  CHECK_THROWS_AS(t.update_weight(-1, 1.0), ContractError);
  CHECK_THROWS_AS(t.update_weight(6, 1.0), ContractError);
  CHECK_THROWS_AS(t.update_weight(0, -1.0), ContractError);

  SamplingTree lone(std::vector<double>{3.0});
  CHECK_THROWS_AS(lone.update_weight(0, 0.0), ContractError);  // would zero the total
}

TEST_CASE("updated trees sample by the new law", "[sampler]") {
  SamplingTree t(std::vector<double>{1.0, 1.0, 1.0, 1.0});
  t.update_weight(0, 5.0);  // p = 5/8, 1/8, 1/8, 1/8
  const int draws = 40000;
  std::vector<int> count(4, 0);
  Rng rng(17);
  for (int k = 0; k < draws; ++k) ++count[static_cast<std::size_t>(t.draw(rng))];
  for (int i = 0; i < 4; ++i) {
    const double p = t.probability(i);
    const double sd = std::sqrt(draws * p * (1.0 - p));
    CHECK(std::abs(count[static_cast<std::size_t>(i)] - draws * p) <= 4.0 * sd);
  }
}

TEST_CASE("visit instrumentation counts one comparison per level", "[sampler]") {
  SamplingTree t5(std::vector<double>{1.0, 1.0, 1.0, 1.0, 1.0});  // padded to 8 leaves
  t5.reset_visits();
  (void)t5.find(2.5);
  CHECK(t5.visits() == 3);  // log2(8)

  SamplingTree t16(std::vector<double>(16, 1.0));
  t16.reset_visits();
  Rng rng(1);
  for (int k = 0; k < 100; ++k) (void)t16.draw(rng);
  CHECK(t16.visits() == 400);  // 4 levels per draw

  SamplingTree t1(std::vector<double>{2.0});
  t1.reset_visits();
  CHECK(t1.find(1.5) == 0);
  CHECK(t1.visits() == 0);  // single leaf, no descent
}
