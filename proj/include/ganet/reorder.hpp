#pragma once

// Random reordering of a point set into a k2 x k1 grid of slots.
//
// N points are padded to N^ = k1 * k2 slots by duplicating uniformly drawn
// points, the slot multiset is shuffled, and consecutive runs of k1 slots
// form the row subsets U_i. Column j of the grid is the subset W_j of k2
// points. Each point has one canonical slot (its first occurrence), which is
// the one read back when collapsing to N rows.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ndarr.hpp"
#include "nn_layers.hpp"
#include "rng.hpp"

namespace ganet {

struct ReorderPlan {
  std::size_t n = 0;
  std::size_t k1 = 0;
  std::size_t k2 = 0;
  Index slots;      // length k1*k2, slot -> original point
  Index canonical;  // length n, point -> first slot holding it

  std::size_t expanded() const { return k1 * k2; }
};

inline std::size_t ceil_sqrt(std::size_t n) {
  auto r = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (r * r > n) --r;
  while (r * r < n) ++r;
  return r;
}

inline std::size_t default_k1(std::size_t n) { return std::max<std::size_t>(1, ceil_sqrt(n)); }

inline Index first_occurrences(const Index& slots, std::size_t n) {
  constexpr auto kUnset = static_cast<std::size_t>(-1);
  Index canonical(n, kUnset);
  for (std::size_t s = slots.size(); s-- > 0;) canonical.at(slots[s]) = s;
  for (std::size_t i = 0; i < n; ++i) {
    if (canonical[i] == kUnset) throw std::logic_error("reorder: point " + std::to_string(i) + " has no slot");
  }
  return canonical;
}

inline ReorderPlan make_plan(std::size_t n, std::size_t k1, std::uint64_t seed) {
  if (k1 < 1 || k1 > n) {
    throw std::invalid_argument("make_plan: k1=" + std::to_string(k1) + " outside [1," + std::to_string(n) + "]");
  }
  ReorderPlan plan;
  plan.n = n;
  plan.k1 = k1;
  plan.k2 = (n + k1 - 1) / k1;
  Rng rng(seed);
  plan.slots.resize(plan.expanded());
  for (std::size_t i = 0; i < n; ++i) plan.slots[i] = i;
  for (std::size_t s = n; s < plan.slots.size(); ++s) plan.slots[s] = rng.index(n);
  rng.shuffle(plan.slots);
  plan.canonical = first_occurrences(plan.slots, n);
  return plan;
}

// Slots in point order, no duplicates; requires k1 | n.
inline ReorderPlan identity_plan(std::size_t n, std::size_t k1) {
  if (k1 < 1 || n % k1 != 0) throw std::invalid_argument("identity_plan: k1 must divide n");
  ReorderPlan plan{n, k1, n / k1, Index(n), {}};
  for (std::size_t i = 0; i < n; ++i) plan.slots[i] = i;
  plan.canonical = plan.slots;
  return plan;
}

// Plan for the row-permuted point set p'[r] = p[perm[r]] that places every
// original point in the same slot it had under `plan`.
inline ReorderPlan relabel(const ReorderPlan& plan, const Index& perm) {
  if (perm.size() != plan.n) throw std::invalid_argument("relabel: permutation size mismatch");
  Index inv(plan.n);
  for (std::size_t r = 0; r < perm.size(); ++r) inv.at(perm[r]) = r;
  ReorderPlan out = plan;
  for (auto& s : out.slots) s = inv[s];
  for (std::size_t r = 0; r < plan.n; ++r) out.canonical[r] = plan.canonical[perm[r]];
  return out;
}

template <Value T>
T expand(const T& f, const ReorderPlan& plan) {
  if (f.shape().size() != 2 || f.shape()[0] != plan.n) {
    throw ShapeError("expand: features " + shape_str(f.shape()) + " for a plan over " +
                     std::to_string(plan.n) + " points");
  }
  const std::size_t c = f.shape()[1];
  return reshape(gather_rows(f, plan.slots), {plan.k2, plan.k1, c});
}

template <Value T>
T collapse(const T& h, const ReorderPlan& plan) {
  const Shape& s = h.shape();
  if (s.size() != 3 || s[0] != plan.k2 || s[1] != plan.k1) {
    throw ShapeError("collapse: grid " + shape_str(s) + " does not match plan (" +
                     std::to_string(plan.k2) + "," + std::to_string(plan.k1) + ",C)");
  }
  return gather_rows(reshape(h, {plan.expanded(), s[2]}), plan.canonical);
}

}  // namespace ganet
