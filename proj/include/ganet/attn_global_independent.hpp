#pragma once

// Point-independent global attention: one softmax attention map over all N
// points pools the features into a single vector, two FC layers (with layer
// norm and ReLU in between) turn it into a channel gate, and every point's
// features are multiplied by that gate.

#include <string>

#include "ndarr.hpp"
#include "nn_layers.hpp"

namespace ganet {

struct PigParams {
  LinearParams score;  // C -> 1
  LinearParams fc1;    // C -> C
  LayerNormParams ln;  // C
  LinearParams fc2;    // C -> C
};

inline PigParams init_pig(std::size_t c, Rng& rng) {
  PigParams p;
  p.score = init_linear(c, 1, rng);
  p.fc1 = init_linear(c, c, rng);
  p.ln = init_layer_norm(c);
  p.fc2 = init_linear(c, c, rng);
  return p;
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, PigParams>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  for_each_tensor(p.score, prefix + ".score", f);
  for_each_tensor(p.fc1, prefix + ".fc1", f);
  for_each_tensor(p.ln, prefix + ".ln", f);
  for_each_tensor(p.fc2, prefix + ".fc2", f);
}

// Softmax over the N points of score(f_i); returned as a [1,N] row. The score
// bias is shared by all points and cancels inside the softmax. Reductions over
// points are order-independent, so the module commutes exactly with any
// reordering of the points.
template <Value T>
T attention_weights(const T& f, const PigParams& p) {
  if (f.shape().size() != 2) throw ShapeError("attention_weights: expected [N,C], got " + shape_str(f.shape()));
  const std::size_t n = f.shape()[0];
  return softmax_rows_invariant(reshape(linear(f, p.score), {1, n}));
}

// Channel gate fc2(relu(ln(fc1(sum_j w_j f_j)))), shape [1,C].
template <Value T>
T pig_gate(const T& f, const PigParams& p) {
  const T pooled = pool(attention_weights(f, p), f);
  return linear(relu(layer_norm(linear(pooled, p.fc1), p.ln)), p.fc2);
}

template <Value T>
T pig_forward(const T& f, const PigParams& p) {
  return bcast_mul_row(f, pig_gate(f, p));
}

}  // namespace ganet
