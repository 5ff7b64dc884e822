#pragma once

// Pointwise neural primitives: shared MLP (one affine layer applied to every
// point), FC stacks, layer normalization, ReLU and row softmax.
//
// Layers are written once as templates over the value type: with `Arr` they
// evaluate directly, with `Var` they record into the input's Graph and bind
// each parameter array as a leaf of that graph.

#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ndarr.hpp"
#include "rng.hpp"

namespace ganet {

template <class T>
concept Value = std::same_as<T, Arr> || std::same_as<T, Var>;

inline const Arr& lift(const Arr&, const Arr& p) { return p; }
inline Var lift(const Var& like, const Arr& p) { return like.graph().param(p); }

inline constexpr double kLayerNormEpsilon = 1e-5;

struct LinearParams {
  Arr weight;  // [Cin, Cout]
  Arr bias;    // [Cout]

  std::size_t in() const { return weight.extent(0); }
  std::size_t out() const { return weight.extent(1); }
};

struct LayerNormParams {
  Arr gamma;  // [C]
  Arr beta;   // [C]
  double epsilon = kLayerNormEpsilon;
};

// Weight and bias uniform in [-1/sqrt(cin), 1/sqrt(cin)].
inline LinearParams init_linear(std::size_t cin, std::size_t cout, Rng& rng) {
  if (cin == 0 || cout == 0) throw ShapeError("init_linear: zero extent");
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
  LinearParams p{Arr({cin, cout}), Arr({cout})};
  for (auto& v : p.weight.data()) v = rng.uniform(-bound, bound);
  for (auto& v : p.bias.data()) v = rng.uniform(-bound, bound);
  return p;
}

inline LayerNormParams init_layer_norm(std::size_t c) {
  return {Arr({c}, 1.0), Arr({c}, 0.0), kLayerNormEpsilon};
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, LinearParams>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  f(prefix + ".weight", p.weight);
  f(prefix + ".bias", p.bias);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, LayerNormParams>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  f(prefix + ".gamma", p.gamma);
  f(prefix + ".beta", p.beta);
}

// Flattened (name, tensor) view of any parameter bundle, in visiting order.
template <class P>
auto named_tensors(P& p, const std::string& prefix = "") {
  using Ptr = std::conditional_t<std::is_const_v<P>, const Arr*, Arr*>;
  std::vector<std::pair<std::string, Ptr>> out;
  for_each_tensor(p, prefix, [&](const std::string& name, auto& t) { out.emplace_back(name, &t); });
  return out;
}

template <class P>
std::size_t parameter_count(const P& p) {
  std::size_t n = 0;
  for_each_tensor(p, "", [&](const std::string&, const Arr& t) { n += t.size(); });
  return n;
}

template <Value T>
T linear(const T& x, const LinearParams& p) {
  if (x.shape().back() != p.in()) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(p.weight.shape()));
  }
  return pointwise_linear(x, lift(x, p.weight), lift(x, p.bias));
}

template <Value T>
T layer_norm(const T& x, const LayerNormParams& p) {
  if (!(p.epsilon > 0.0)) throw std::invalid_argument("layer_norm: epsilon must be positive");
  return layer_norm(x, lift(x, p.gamma), lift(x, p.beta), p.epsilon);
}

enum class Activation { none, relu };

struct FcLayer {
  LinearParams linear;
  Activation activation = Activation::relu;
};

inline std::vector<FcLayer> init_fc_stack(std::span<const std::size_t> dims, Rng& rng,
                                          Activation last = Activation::none) {
  std::vector<FcLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool is_last = i + 2 == dims.size();
    layers.push_back({init_linear(dims[i], dims[i + 1], rng), is_last ? last : Activation::relu});
  }
  return layers;
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, std::vector<FcLayer>>
void for_each_tensor(P& layers, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for_each_tensor(layers[i].linear, prefix + "." + std::to_string(i), f);
  }
}

template <Value T>
T fc_stack(const T& x, std::span<const FcLayer> layers) {
  T h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (h.shape().back() != layers[i].linear.in()) {
      throw ShapeError("fc_stack: layer " + std::to_string(i) + " expects " +
                       std::to_string(layers[i].linear.in()) + " inputs, got " + shape_str(h.shape()));
    }
    h = linear(h, layers[i].linear);
    if (layers[i].activation == Activation::relu) h = relu(h);
  }
  return h;
}

}  // namespace ganet
