#pragma once

// Point-dependent global attention.
//
// A random cross attention block (RCAB) lays the points out on a random
// k2 x k1 grid (see reorder.hpp) and runs self-attention twice: first inside
// every row U_i (k1 points), then, after swapping the grid axes, inside every
// column W_j (k2 points). Each point therefore attends to k1 + k2 others
// instead of all N. Two stacked blocks are followed by the point-adaptive
// aggregation block (PAB), a per-point softmax-weighted blend of the block
// output and the module input.

#include <string>
#include <utility>

#include "ndarr.hpp"
#include "nn_layers.hpp"
#include "reorder.hpp"

namespace ganet {

struct RcabPassParams {
  LinearParams key;    // C -> C
  LinearParams query;  // C -> C
  LinearParams value;  // C -> C
};

struct RcabParams {
  RcabPassParams pass1;
  RcabPassParams pass2;
};

struct PdgParams {
  RcabParams rcab1;
  RcabParams rcab2;
  LinearParams pab_h;  // C -> 1
  LinearParams pab_g;  // C -> 1
};

inline RcabPassParams init_rcab_pass(std::size_t c, Rng& rng) {
  RcabPassParams p;
  p.key = init_linear(c, c, rng);
  p.query = init_linear(c, c, rng);
  p.value = init_linear(c, c, rng);
  return p;
}

inline RcabParams init_rcab(std::size_t c, Rng& rng) {
  RcabParams p;
  p.pass1 = init_rcab_pass(c, rng);
  p.pass2 = init_rcab_pass(c, rng);
  return p;
}

inline PdgParams init_pdg(std::size_t c, Rng& rng) {
  PdgParams p;
  p.rcab1 = init_rcab(c, rng);
  p.rcab2 = init_rcab(c, rng);
  p.pab_h = init_linear(c, 1, rng);
  p.pab_g = init_linear(c, 1, rng);
  return p;
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, RcabPassParams>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  for_each_tensor(p.key, prefix + ".key", f);
  for_each_tensor(p.query, prefix + ".query", f);
  for_each_tensor(p.value, prefix + ".value", f);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, RcabParams>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  for_each_tensor(p.pass1, prefix + ".pass1", f);
  for_each_tensor(p.pass2, prefix + ".pass2", f);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, PdgParams>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  for_each_tensor(p.rcab1, prefix + ".rcab1", f);
  for_each_tensor(p.rcab2, prefix + ".rcab2", f);
  for_each_tensor(p.pab_h, prefix + ".pab_h", f);
  for_each_tensor(p.pab_g, prefix + ".pab_g", f);
}

// Row-stochastic [B,S,S] attention maps softmax(K Q^T) of one pass.
template <Value T>
T attention_map(const T& x, const RcabPassParams& p) {
  return softmax_rows(matmul_bt(linear(x, p.key), linear(x, p.query)));
}

// Self-attention within every batch slice of x[B,S,C].
template <Value T>
T rcab_pass(const T& x, const RcabPassParams& p) {
  if (x.shape().size() != 3) throw ShapeError("rcab_pass: expected [B,S,C], got " + shape_str(x.shape()));
  return matmul(attention_map(x, p), linear(x, p.value));
}

template <Value T>
T rcab_block(const T& g, const ReorderPlan& plan, const RcabParams& p) {
  if (g.shape().size() != 2 || g.shape()[0] != plan.n) {
    throw ShapeError("rcab_block: features " + shape_str(g.shape()) + " for a plan over " +
                     std::to_string(plan.n) + " points");
  }
  const T rows = rcab_pass(expand(g, plan), p.pass1);           // [k2,k1,C], over U_i
  const T cols = rcab_pass(transpose01(rows), p.pass2);         // [k1,k2,C], over W_j
  return collapse(transpose01(cols), plan);
}

// Per-point blend softmax([mlp_h(h_i), mlp_g(g_i)]) . [h_i; g_i].
template <Value T>
T pab(const T& h, const T& g, const LinearParams& score_h, const LinearParams& score_g) {
  if (h.shape() != g.shape()) {
    throw ShapeError("pab: shapes " + shape_str(h.shape()) + " and " + shape_str(g.shape()) + " differ");
  }
  const T weights = softmax_rows(concat_last(linear(h, score_h), linear(g, score_g)));
  return add(scale_rows(h, select_col(weights, 0)), scale_rows(g, select_col(weights, 1)));
}

template <Value T>
T pab(const T& h, const T& g, const PdgParams& p) {
  return pab(h, g, p.pab_h, p.pab_g);
}

template <Value T>
T pdg_forward(const T& g, const std::pair<ReorderPlan, ReorderPlan>& plans, const PdgParams& p) {
  const T h1 = rcab_block(g, plans.first, p.rcab1);
  const T h2 = rcab_block(h1, plans.second, p.rcab2);
  return pab(h2, g, p);
}

// Attention weights one point receives from a single block.
inline std::size_t rcab_weights_per_point(const ReorderPlan& plan) { return plan.k1 + plan.k2; }

}  // namespace ganet
