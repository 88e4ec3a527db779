#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "accd/core.hpp"
#include "accd/rng.hpp"

// Weight-proportional coordinate sampling over p_i = L_i^beta / sum_j L_j^beta,
// held in a flat complete binary tree (leaves padded to a power of two).
// Build O(n); draw and update O(log n).  Internal nodes store exact sums of
// their children by construction, so prefix structure never drifts.

namespace accd {

class SamplingTree {
 public:
  SamplingTree() = default;

  // weights must be nonnegative, finite, with a positive total
  explicit SamplingTree(const std::vector<double>& weights) { build(weights); }

  static SamplingTree from_lipschitz(const vec& lips, double beta) {
    if (beta < 0.0 || beta > 1.0) throw ContractError("beta must lie in [0,1]");
    std::vector<double> w(lips.size());
    for (std::size_t i = 0; i < lips.size(); ++i) {
      if (!(lips[i] > 0.0)) throw ContractError("Lipschitz constants must be positive");
      w[i] = detail::pow_weight(lips[i], beta);
    }
    return SamplingTree(w);
  }

  void build(const std::vector<double>& weights) {
    n_ = static_cast<int>(weights.size());
    if (n_ < 1) throw ContractError("SamplingTree: need at least one weight");
    base_ = 1;
    while (base_ < n_) base_ <<= 1;
    node_.assign(static_cast<std::size_t>(2 * base_), 0.0);
    for (int i = 0; i < n_; ++i) {
      check_weight(weights[i]);
      node_[static_cast<std::size_t>(base_ + i)] = weights[i];
    }
    for (int j = base_ - 1; j >= 1; --j)
      node_[j] = node_[2 * j] + node_[2 * j + 1];
    if (!(total() > 0.0)) throw ContractError("SamplingTree: total weight must be positive");
  }

  int size() const { return n_; }
  double total() const { return node_[1]; }
  double weight(int i) const { return node_[static_cast<std::size_t>(base_ + i)]; }
  double probability(int i) const { return weight(i) / total(); }

  // Inverse-CDF descent for u in [0, total); half-open leaf intervals, so a
  // boundary u selects the next positive-weight leaf and zero-weight leaves
  // are unreachable.  <= ceil(log2 n)+1 node visits, instrumented.
  int find(double u) const {
    if (!(u >= 0.0) || !(u < total()))
      throw ContractError("SamplingTree: u outside [0, total)");
    int j = 1;
    while (j < base_) {
      const double left = node_[2 * j];
      ++visits_;
      // never step into an empty subtree even if subtraction drift pushed u high
      if (u < left || node_[2 * j + 1] <= 0.0) {
        j = 2 * j;
      } else {
        u -= left;
        j = 2 * j + 1;
      }
    }
    return j - base_;
  }

  // Consumes exactly one uniform variate.
  int draw(Rng& rng) const { return find(rng.unit() * total()); }

  void update_weight(int i, double w) {
    if (i < 0 || i >= n_) throw ContractError("SamplingTree: index out of range");
    check_weight(w);
    const double old = node_[static_cast<std::size_t>(base_ + i)];
    if (w == 0.0 && total() - old <= 0.0)
      throw ContractError("SamplingTree: update would zero the total weight");
    node_[static_cast<std::size_t>(base_ + i)] = w;
    for (int j = (base_ + i) >> 1; j >= 1; j >>= 1)
      node_[j] = node_[2 * j] + node_[2 * j + 1];
  }

  // instrumentation: total node visits across find() calls
  std::uint64_t visits() const { return visits_; }
  void reset_visits() const { visits_ = 0; }

  // exposed for audits: internal node j against the sum of its children
  double node_value(int j) const { return node_[static_cast<std::size_t>(j)]; }
  int internal_nodes() const { return base_; }

 private:
  static void check_weight(double w) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ContractError("SamplingTree: weights must be finite and nonnegative");
  }

  int n_ = 0;
  int base_ = 0;
  std::vector<double> node_;
  mutable std::uint64_t visits_ = 0;
};

}  // namespace accd
