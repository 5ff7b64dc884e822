#pragma once

// Central-difference gradient checks.
//
// A check is a closure that builds a scalar loss in a fresh Graph, binding
// every array it differentiates through Graph::param. The checker perturbs
// those arrays in place and compares
//     |analytic - numeric| / max(1, |analytic|)
// entry by entry.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attn_global_dependent.hpp"
#include "attn_global_independent.hpp"
#include "ganet_model.hpp"
#include "ndarr.hpp"
#include "nn_layers.hpp"
#include "oracle.hpp"
#include "reorder.hpp"
#include "rng.hpp"

namespace ganet {

using ScalarFn = std::function<Var(Graph&)>;

inline constexpr double kGradStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;

// `corrupt` is added to every analytic gradient entry; it exists so callers
// can confirm that the checker actually rejects a wrong gradient.
inline double max_gradient_error(const ScalarFn& f, std::span<Arr* const> wrt, double h = kGradStep,
                                 double corrupt = 0.0) {
  std::vector<Arr> analytic;
  {
    Graph g;
    const Var loss = f(g);
    g.backward(loss);
    for (Arr* a : wrt) analytic.push_back(g.grad_of(*a));
  }
  auto eval = [&] {
    Graph g;
    return f(g).value().item();
  };
  double worst = 0.0;
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    Arr& x = *wrt[t];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + h;
      const double up = eval();
      x[i] = keep - h;
      const double down = eval();
      x[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][i] + corrupt;
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

struct GradTarget {
  std::string name;
  // (seed, corrupt) -> worst relative error
  std::function<double(std::uint64_t, double)> run;
};

struct GradResult {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

namespace detail {

inline Arr random_arr(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Arr a(std::move(s));
  for (auto& v : a.data()) v = rng.uniform(lo, hi);
  return a;
}

// Entries bounded away from 0 so ReLU kinks stay outside +-h.
inline Arr random_nonzero(Shape s, Rng& rng) {
  Arr a(std::move(s));
  for (auto& v : a.data()) {
    const double m = rng.uniform(0.05, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return a;
}

// Scalar probe <y, R> with a fixed random R, so every output entry matters.
inline Var probe(const Var& y, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "probe"));
  return dot(y, random_arr(y.shape(), rng));
}

template <class P>
std::vector<Arr*> tensors_of(P& p) {
  std::vector<Arr*> out;
  for (auto& [name, t] : named_tensors(p)) out.push_back(t);
  return out;
}

inline std::vector<Arr*> join(std::vector<Arr*> a, const std::vector<Arr*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace detail

// Every differentiable operation and composed module, on N <= 16, C <= 8.
inline std::vector<GradTarget> gradient_suite() {
  using detail::probe;
  using detail::random_arr;
  using detail::random_nonzero;
  std::vector<GradTarget> s;

  auto binary = [](std::string name, Shape sa, Shape sb, std::function<Var(const Var&, const Var&)> op) {
    return GradTarget{name, [=](std::uint64_t seed, double corrupt) {
                        Rng rng(derive_seed(seed, name));
                        Arr a = random_arr(sa, rng), b = random_arr(sb, rng);
                        Arr* wrt[] = {&a, &b};
                        return max_gradient_error(
                            [&](Graph& g) { return probe(op(g.param(a), g.param(b)), seed); }, wrt, kGradStep,
                            corrupt);
                      }};
  };
  auto unary = [](std::string name, Shape sa, std::function<Var(const Var&)> op, bool nonzero = false) {
    return GradTarget{name, [=](std::uint64_t seed, double corrupt) {
                        Rng rng(derive_seed(seed, name));
                        Arr a = nonzero ? random_nonzero(sa, rng) : random_arr(sa, rng);
                        Arr* wrt[] = {&a};
                        return max_gradient_error([&](Graph& g) { return probe(op(g.param(a)), seed); }, wrt,
                                                  kGradStep, corrupt);
                      }};
  };

  s.push_back(binary("matmul", {3, 4}, {4, 2}, [](const Var& a, const Var& b) { return matmul(a, b); }));
  s.push_back(binary("matmul.batched", {2, 3, 4}, {2, 4, 2}, [](const Var& a, const Var& b) { return matmul(a, b); }));
  s.push_back(binary("matmul_bt", {2, 3, 4}, {2, 5, 4}, [](const Var& a, const Var& b) { return matmul_bt(a, b); }));
  s.push_back(unary("transpose01", {2, 3, 2}, [](const Var& a) { return transpose01(a); }));
  s.push_back(unary("gather_rows", {5, 3}, [](const Var& a) { return gather_rows(a, Index{4, 0, 0, 2, 4, 4}); }));
  s.push_back(unary("scatter_add_rows", {6, 3},
                    [](const Var& a) { return scatter_add_rows(a, Index{1, 1, 0, 3, 1, 2}, 5); }));
  s.push_back(binary("ew.add", {4, 3}, {4, 3}, [](const Var& a, const Var& b) { return add(a, b); }));
  s.push_back(binary("ew.mul", {4, 3}, {4, 3}, [](const Var& a, const Var& b) { return mul(a, b); }));
  s.push_back(binary("ew.bcast_mul_row", {4, 3}, {1, 3},
                     [](const Var& a, const Var& b) { return bcast_mul_row(a, b); }));
  s.push_back(binary("scale_rows", {4, 3}, {4, 1}, [](const Var& a, const Var& b) { return scale_rows(a, b); }));
  s.push_back(binary("concat_last", {4, 2}, {4, 3}, [](const Var& a, const Var& b) { return concat_last(a, b); }));
  s.push_back(unary("select_col", {4, 3}, [](const Var& a) { return select_col(a, 1); }));
  s.push_back(unary("reshape", {4, 3}, [](const Var& a) { return reshape(a, {2, 6}); }));
  s.push_back(unary("relu", {5, 4}, [](const Var& a) { return relu(a); }, true));
  s.push_back(unary("softmax_rows", {3, 5}, [](const Var& a) { return softmax_rows(a); }));
  s.push_back(unary("softmax_rows_invariant", {1, 7}, [](const Var& a) { return softmax_rows_invariant(a); }));
  s.push_back(binary("pool", {1, 6}, {6, 3}, [](const Var& a, const Var& b) { return pool(a, b); }));
  s.push_back(unary("sum", {3, 4}, [](const Var& a) { return sum(a); }));

  s.push_back({"pointwise_linear", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "pointwise_linear"));
                 Arr x = random_arr({2, 5, 4}, rng);
                 LinearParams p = init_linear(4, 3, rng);
                 auto wrt = detail::join({&x}, detail::tensors_of(p));
                 return max_gradient_error([&](Graph& g) { return probe(linear(g.param(x), p), seed); }, wrt,
                                           kGradStep, corrupt);
               }});
  s.push_back({"layer_norm", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "layer_norm"));
                 Arr x = random_arr({5, 6}, rng);
                 LayerNormParams p{random_arr({6}, rng, 0.5, 1.5), random_arr({6}, rng), kLayerNormEpsilon};
                 auto wrt = detail::join({&x}, detail::tensors_of(p));
                 return max_gradient_error([&](Graph& g) { return probe(layer_norm(g.param(x), p), seed); }, wrt,
                                           kGradStep, corrupt);
               }});
  s.push_back({"fc_stack", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "fc_stack"));
                 Arr x = random_arr({6, 4}, rng);
                 const std::size_t dims[] = {4, 8, 6, 3};
                 auto layers = init_fc_stack(dims, rng);
                 auto wrt = detail::join({&x}, detail::tensors_of(layers));
                 return max_gradient_error(
                     [&](Graph& g) { return probe(fc_stack(g.param(x), std::span<const FcLayer>(layers)), seed); },
                     wrt, kGradStep, corrupt);
               }});
  s.push_back({"loss_ce", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "loss_ce"));
                 Arr z = random_arr({8, 4}, rng, -2.0, 2.0);
                 Index labels(8);
                 for (auto& l : labels) l = rng.index(4);
                 Arr* wrt[] = {&z};
                 return max_gradient_error([&](Graph& g) { return loss_ce(g.param(z), labels); }, wrt, kGradStep,
                                           corrupt);
               }});

  s.push_back({"reorder.expand", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "expand"));
                 Arr f = random_arr({5, 3}, rng);
                 const ReorderPlan plan = make_plan(5, 2, seed);
                 Arr* wrt[] = {&f};
                 return max_gradient_error([&](Graph& g) { return probe(expand(g.param(f), plan), seed); }, wrt,
                                           kGradStep, corrupt);
               }});
  s.push_back({"reorder.collapse_expand", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "collapse"));
                 Arr f = random_arr({7, 3}, rng);
                 const ReorderPlan plan = make_plan(7, 3, seed);
                 Arr* wrt[] = {&f};
                 return max_gradient_error(
                     [&](Graph& g) { return probe(collapse(expand(g.param(f), plan), plan), seed); }, wrt, kGradStep,
                     corrupt);
               }});

  s.push_back({"pig.attention_weights", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "pig.w"));
                 Arr f = random_arr({9, 6}, rng);
                 PigParams p = init_pig(6, rng);
                 auto wrt = detail::join({&f}, {&p.score.weight});
                 return max_gradient_error([&](Graph& g) { return probe(attention_weights(g.param(f), p), seed); },
                                           wrt, kGradStep, corrupt);
               }});
  s.push_back({"pig_forward", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "pig"));
                 Arr f = random_arr({10, 6}, rng);
                 PigParams p = init_pig(6, rng);
                 for (auto& v : p.ln.gamma.data()) v = rng.uniform(0.5, 1.5);
                 for (auto& v : p.ln.beta.data()) v = rng.uniform(-0.5, 0.5);
                 auto wrt = detail::join({&f}, detail::tensors_of(p));
                 return max_gradient_error([&](Graph& g) { return probe(pig_forward(g.param(f), p), seed); }, wrt,
                                           kGradStep, corrupt);
               }});
  s.push_back({"rcab_pass", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "rcab_pass"));
                 Arr x = random_arr({3, 4, 5}, rng);
                 RcabPassParams p = init_rcab_pass(5, rng);
                 auto wrt = detail::join({&x}, detail::tensors_of(p));
                 return max_gradient_error([&](Graph& g) { return probe(rcab_pass(g.param(x), p), seed); }, wrt,
                                           kGradStep, corrupt);
               }});
  s.push_back({"rcab_block", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "rcab_block"));
                 Arr x = random_arr({11, 4}, rng);
                 RcabParams p = init_rcab(4, rng);
                 const ReorderPlan plan = make_plan(11, 4, seed);  // 12 slots, one duplicate
                 auto wrt = detail::join({&x}, detail::tensors_of(p));
                 return max_gradient_error([&](Graph& g) { return probe(rcab_block(g.param(x), plan, p), seed); },
                                           wrt, kGradStep, corrupt);
               }});
  s.push_back({"pab", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "pab"));
                 Arr h = random_arr({7, 5}, rng), g0 = random_arr({7, 5}, rng);
                 PdgParams p = init_pdg(5, rng);
                 auto wrt = detail::join({&h, &g0}, detail::join(detail::tensors_of(p.pab_h), detail::tensors_of(p.pab_g)));
                 return max_gradient_error(
                     [&](Graph& g) { return probe(pab(g.param(h), g.param(g0), p), seed); }, wrt, kGradStep, corrupt);
               }});
  s.push_back({"pdg_forward", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "pdg"));
                 Arr x = random_arr({13, 4}, rng);
                 PdgParams p = init_pdg(4, rng);
                 const std::pair plans{make_plan(13, 4, seed), make_plan(13, 5, seed + 1)};
                 auto wrt = detail::join({&x}, detail::tensors_of(p));
                 return max_gradient_error([&](Graph& g) { return probe(pdg_forward(g.param(x), plans, p), seed); },
                                           wrt, kGradStep, corrupt);
               }});
  s.push_back({"nonlocal_forward", [](std::uint64_t seed, double corrupt) {
                 Rng rng(derive_seed(seed, "nonlocal"));
                 Arr x = random_arr({8, 4}, rng);
                 RcabPassParams p = init_rcab_pass(4, rng);
                 auto wrt = detail::join({&x}, detail::tensors_of(p));
                 return max_gradient_error([&](Graph& g) { return probe(nonlocal_forward(g.param(x), p), seed); },
                                           wrt, kGradStep, corrupt);
               }});

  auto model_target = [](std::string name, std::string_view prefix, Variant variant) {
    return GradTarget{name, [=](std::uint64_t seed, double corrupt) {
                        GanetConfig cfg;
                        cfg.c = 8;
                        cfg.num_classes = 4;
                        cfg.variant = variant;
                        cfg.seed = seed;
                        GanetParams p = init_params(cfg);
                        Rng rng(derive_seed(seed, name));
                        Arr pts = random_arr({12, cfg.in_channels}, rng, 0.0, 1.0);
                        Index labels(12);
                        for (auto& l : labels) l = rng.index(cfg.num_classes);
                        std::vector<Arr*> wrt;
                        for (auto& [n, t] : named_tensors(p)) {
                          if (n.starts_with(prefix) && is_active(cfg, n)) wrt.push_back(t);
                        }
                        const auto plans = make_plans(12, cfg, seed);
                        return max_gradient_error(
                            [&](Graph& g) { return loss_ce(forward(g.constant(pts), p, cfg, plans), labels); }, wrt,
                            kGradStep, corrupt);
                      }};
  };
  s.push_back(model_target("model.encoder", "encoder", Variant::full));
  s.push_back(model_target("model.head", "head", Variant::full));
  s.push_back(model_target("model.full", "", Variant::full));
  s.push_back(model_target("model.rcab1_plus", "", Variant::rcab1_plus));
  return s;
}

inline std::vector<GradResult> run_gradient_suite(std::uint64_t seed, double tol = kGradTolerance,
                                                  std::string_view corrupt_target = {}) {
  std::vector<GradResult> out;
  for (const auto& t : gradient_suite()) {
    const double corrupt = (!corrupt_target.empty() && t.name == corrupt_target) ? 1e-2 : 0.0;
    const double err = t.run(seed, corrupt);
    out.push_back({t.name, err, err <= tol});
  }
  return out;
}

}  // namespace ganet
