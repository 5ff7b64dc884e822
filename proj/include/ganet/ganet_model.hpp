#pragma once

// Full segmentation head: pointwise encoder -> point-independent attention ->
// point-dependent attention -> FC classifier, plus the ablation variants that
// switch the attention stages on one at a time.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attn_global_dependent.hpp"
#include "attn_global_independent.hpp"
#include "binary_io.hpp"
#include "ndarr.hpp"
#include "nn_layers.hpp"
#include "reorder.hpp"
#include "rng.hpp"
#include "synth_data.hpp"

namespace ganet {

enum class Variant { baseline, rcab1_plus, rcab1_pab, rcab2_pab, full };

inline constexpr Variant kAllVariants[] = {Variant::baseline, Variant::rcab1_plus, Variant::rcab1_pab,
                                           Variant::rcab2_pab, Variant::full};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::rcab1_plus: return "rcab1_plus";
    case Variant::rcab1_pab: return "rcab1_pab";
    case Variant::rcab2_pab: return "rcab2_pab";
    case Variant::full: return "full";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == s) return v;
  }
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

inline constexpr std::size_t kEncoderHidden = 32;
inline constexpr std::size_t kHeadHidden1 = 64;
inline constexpr std::size_t kHeadHidden2 = 32;

struct GanetConfig {
  std::size_t c = 16;            // width of both attention modules
  std::size_t k1 = 0;            // subset size; 0 selects ceil(sqrt(N))
  std::size_t num_classes = 4;
  std::size_t in_channels = 3 + kAttributeChannels;
  Variant variant = Variant::full;
  double lr = 0.01;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  bool share_plan = false;       // both RCABs reuse one reorder plan
  bool plus_uses_pig = false;    // rcab1_plus runs the point-independent module first

  void validate() const {
    if (c == 0 || num_classes == 0 || in_channels == 0) throw std::invalid_argument("config: zero width");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("config: lr must be finite and >= 0");
  }
};

struct GanetParams {
  std::vector<FcLayer> encoder;  // (3+d) -> 32 -> C, ReLU after both
  PigParams pig;
  PdgParams pdg;
  std::vector<FcLayer> head;     // C -> 64 -> 32 -> classes
};

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, GanetParams>
void for_each_tensor(P& p, const std::string&, F&& f) {
  for_each_tensor(p.encoder, "encoder", f);
  for_each_tensor(p.pig, "pig", f);
  for_each_tensor(p.pdg, "pdg", f);
  for_each_tensor(p.head, "head", f);
}

inline GanetParams init_params(const GanetConfig& cfg) {
  cfg.validate();
  GanetParams p;
  Rng enc(derive_seed(cfg.seed, "init.encoder"));
  const std::size_t enc_dims[] = {cfg.in_channels, kEncoderHidden, cfg.c};
  p.encoder = init_fc_stack(enc_dims, enc, Activation::relu);
  Rng pig(derive_seed(cfg.seed, "init.pig"));
  p.pig = init_pig(cfg.c, pig);
  Rng pdg(derive_seed(cfg.seed, "init.pdg"));
  p.pdg = init_pdg(cfg.c, pdg);
  Rng head(derive_seed(cfg.seed, "init.head"));
  const std::size_t head_dims[] = {cfg.c, kHeadHidden1, kHeadHidden2, cfg.num_classes};
  p.head = init_fc_stack(head_dims, head, Activation::none);
  return p;
}

inline bool uses_pig(const GanetConfig& cfg) {
  return cfg.variant == Variant::full || (cfg.variant == Variant::rcab1_plus && cfg.plus_uses_pig);
}

// Whether a named tensor takes part in the forward pass of cfg.variant.
inline bool is_active(const GanetConfig& cfg, std::string_view name) {
  const Variant v = cfg.variant;
  if (name.starts_with("encoder") || name.starts_with("head")) return true;
  if (name.starts_with("pig")) return uses_pig(cfg);
  if (name.starts_with("pdg.rcab1")) return v != Variant::baseline;
  if (name.starts_with("pdg.rcab2")) return v == Variant::rcab2_pab || v == Variant::full;
  if (name.starts_with("pdg.pab")) return v == Variant::rcab1_pab || v == Variant::rcab2_pab || v == Variant::full;
  return false;
}

inline std::size_t active_parameter_count(const GanetParams& p, const GanetConfig& cfg) {
  std::size_t n = 0;
  for_each_tensor(p, "", [&](const std::string& name, const Arr& t) {
    if (is_active(cfg, name)) n += t.size();
  });
  return n;
}

inline std::pair<ReorderPlan, ReorderPlan> make_plans(std::size_t n, const GanetConfig& cfg, std::uint64_t plan_seed) {
  const std::size_t k1 = cfg.k1 ? cfg.k1 : default_k1(n);
  ReorderPlan first = make_plan(n, k1, derive_seed(plan_seed, "rcab", 1));
  ReorderPlan second = cfg.share_plan ? first : make_plan(n, k1, derive_seed(plan_seed, "rcab", 2));
  return {std::move(first), std::move(second)};
}

template <Value T>
T forward(const T& points, const GanetParams& p, const GanetConfig& cfg,
          const std::pair<ReorderPlan, ReorderPlan>& plans) {
  if (points.shape().size() != 2 || points.shape()[1] != p.encoder.front().linear.in()) {
    throw ShapeError("forward: points " + shape_str(points.shape()) + " do not match encoder input " +
                     std::to_string(p.encoder.front().linear.in()));
  }
  const T f = fc_stack(points, std::span<const FcLayer>(p.encoder));
  T x = f;
  switch (cfg.variant) {
    case Variant::baseline:
      break;
    case Variant::rcab1_plus: {
      const T g = cfg.plus_uses_pig ? pig_forward(f, p.pig) : f;
      x = add(rcab_block(g, plans.first, p.pdg.rcab1), g);
      break;
    }
    case Variant::rcab1_pab:
      x = pab(rcab_block(f, plans.first, p.pdg.rcab1), f, p.pdg);
      break;
    case Variant::rcab2_pab:
      x = pdg_forward(f, plans, p.pdg);
      break;
    case Variant::full:
      x = pdg_forward(pig_forward(f, p.pig), plans, p.pdg);
      break;
  }
  return fc_stack(x, std::span<const FcLayer>(p.head));
}

template <Value T>
T forward(const T& points, const GanetParams& p, const GanetConfig& cfg, std::uint64_t plan_seed) {
  return forward(points, p, cfg, make_plans(points.shape()[0], cfg, plan_seed));
}

template <Value T>
T loss_ce(const T& logits, const Index& labels) {
  return cross_entropy(logits, labels);
}

// ---------------------------------------------------------------------------
// Optimization.
// ---------------------------------------------------------------------------

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  GanetParams m;
  GanetParams v;
  std::uint64_t step = 0;
  AdamOptions opt;
};

inline AdamState init_adam(const GanetParams& p) {
  AdamState s{p, p, 0, {}};
  for_each_tensor(s.m, "", [](const std::string&, Arr& t) { std::fill(t.data().begin(), t.data().end(), 0.0); });
  for_each_tensor(s.v, "", [](const std::string&, Arr& t) { std::fill(t.data().begin(), t.data().end(), 0.0); });
  return s;
}

struct TrainingError : std::runtime_error {
  TrainingError(const std::string& what, std::uint64_t at) : std::runtime_error(what), step(at) {}
  std::uint64_t step;
};

// Gradients of the loss on one scene w.r.t. every tensor, keyed by name.
inline std::pair<double, std::map<std::string, Arr>> loss_and_gradients(const Arr& points, const Index& labels,
                                                                        const GanetParams& p,
                                                                        const GanetConfig& cfg,
                                                                        std::uint64_t plan_seed) {
  Graph g;
  const Var loss = loss_ce(forward(g.constant(points), p, cfg, plan_seed), labels);
  g.backward(loss);
  std::map<std::string, Arr> grads;
  for_each_tensor(p, "", [&](const std::string& name, const Arr& t) { grads.emplace(name, g.grad_of(t)); });
  return {loss.value().item(), std::move(grads)};
}

inline double adam_step(GanetParams& p, AdamState& s, const GanetConfig& cfg, const Arr& points,
                        const Index& labels, std::uint64_t plan_seed) {
  Graph g;
  const Var loss = loss_ce(forward(g.constant(points), p, cfg, plan_seed), labels);
  const double value = loss.value().item();
  ++s.step;
  if (!std::isfinite(value)) throw TrainingError("non-finite loss at step " + std::to_string(s.step), s.step);
  g.backward(loss);

  auto params = named_tensors(p);
  auto ms = named_tensors(s.m);
  auto vs = named_tensors(s.v);
  const double b1 = s.opt.beta1, b2 = s.opt.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!is_active(cfg, params[t].first)) continue;
    Arr& w = *params[t].second;
    Arr& m = *ms[t].second;
    Arr& v = *vs[t].second;
    const Arr grad = g.grad_of(w);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.opt.epsilon);
    }
  }
  return value;
}

// One Adam step per scene, scenes visited in a seeded order, a fresh pair of
// reorder plans per step. Returns the mean loss.
inline double train_epoch(const std::vector<Scene>& data, GanetParams& p, const GanetConfig& cfg, AdamState& s,
                          std::size_t epoch) {
  if (data.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  Index order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(derive_seed(cfg.seed, "order", epoch));
  shuffle.shuffle(order);
  double total = 0.0;
  for (std::size_t idx : order) {
    const Scene& sc = data[idx];
    total += adam_step(p, s, cfg, scene_features(sc), sc.labels, derive_seed(cfg.seed, "plan", s.step + 1));
  }
  return total / static_cast<double>(data.size());
}

inline std::vector<double> fit(const std::vector<Scene>& data, GanetParams& p, const GanetConfig& cfg,
                               const std::function<void(std::size_t, double)>& on_epoch = {}) {
  AdamState s = init_adam(p);
  std::vector<double> losses;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    losses.push_back(train_epoch(data, p, cfg, s, e));
    if (on_epoch) on_epoch(e, losses.back());
  }
  return losses;
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

struct Metrics {
  double oa = 0.0;
  std::vector<double> iou;  // NaN for classes absent from truth and prediction
  double miou = 0.0;        // mean IoU over classes present in the ground truth
};

inline Metrics metrics_from_predictions(const std::vector<Index>& truth, const std::vector<Index>& pred,
                                        std::size_t classes) {
  std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0), seen(classes, 0);
  std::size_t correct = 0, total = 0;
  for (std::size_t s = 0; s < truth.size(); ++s) {
    for (std::size_t i = 0; i < truth[s].size(); ++i) {
      const std::size_t t = truth[s][i], y = pred[s][i];
      ++seen[t];
      ++total;
      if (t == y) {
        ++correct;
        ++tp[t];
      } else {
        ++fp[y];
        ++fn[t];
      }
    }
  }
  Metrics m;
  m.oa = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  m.iou.assign(classes, std::nan(""));
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    const std::size_t denom = tp[k] + fp[k] + fn[k];
    if (denom) m.iou[k] = static_cast<double>(tp[k]) / static_cast<double>(denom);
    if (seen[k]) {
      sum += m.iou[k];
      ++present;
    }
  }
  m.miou = present ? sum / static_cast<double>(present) : 0.0;
  return m;
}

inline Index argmax_rows(const Arr& logits) {
  const std::size_t k = logits.last();
  Index out(logits.rows());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* row = logits.data().data() + r * k;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

inline std::vector<Index> predict(const std::vector<Scene>& data, const GanetParams& p, const GanetConfig& cfg) {
  std::vector<Index> pred;
  pred.reserve(data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    pred.push_back(argmax_rows(forward(scene_features(data[s]), p, cfg, derive_seed(cfg.seed, "eval_plan", s))));
  }
  return pred;
}

inline Metrics evaluate(const std::vector<Scene>& data, const GanetParams& p, const GanetConfig& cfg) {
  std::vector<Index> truth;
  truth.reserve(data.size());
  for (const Scene& s : data) truth.push_back(s.labels);
  return metrics_from_predictions(truth, predict(data, p, cfg), cfg.num_classes);
}

// ---------------------------------------------------------------------------
// Checkpoints: "GANET1", then per tensor u32 name length, name bytes, u32
// rank, u64 extents, row-major f64 values; all little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "GANET1";

inline std::vector<std::uint8_t> encode_checkpoint(const GanetParams& p) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  for_each_tensor(p, "", [&](const std::string& name, const Arr& t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
    for (double v : t.data()) w.f64(v);
  });
  return w.buffer();
}

inline std::map<std::string, Arr> decode_tensors(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic) throw FormatError("bad checkpoint magic", 0);
  std::map<std::string, Arr> out;
  while (!r.done()) {
    const std::size_t at = r.offset();
    const std::uint32_t len = r.u32("name length");
    std::string name = r.bytes(len, "tensor name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0) throw FormatError("tensor '" + name + "' has rank 0", at);
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& e : shape) {
      e = r.u64("extent");
      if (e == 0) throw FormatError("tensor '" + name + "' has a zero extent", at);
      count *= e;
    }
    if (count > bytes.size()) throw FormatError("tensor '" + name + "' larger than file", at);
    std::vector<double> data(count);
    for (auto& v : data) v = r.f64("tensor values");
    if (!out.emplace(name, Arr(std::move(shape), std::move(data))).second) {
      throw FormatError("duplicate tensor '" + name + "'", at);
    }
  }
  return out;
}

// Overwrites every tensor of `p` from the checkpoint; names and shapes must match.
inline void decode_checkpoint(std::span<const std::uint8_t> bytes, GanetParams& p) {
  auto tensors = decode_tensors(bytes);
  for_each_tensor(p, "", [&](const std::string& name, Arr& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                               ", expected " + shape_str(t.shape()));
    }
    t = std::move(it->second);
    tensors.erase(it);
  });
  if (!tensors.empty()) throw std::runtime_error("checkpoint has unknown tensor '" + tensors.begin()->first + "'");
}

inline void save_checkpoint(const GanetParams& p, const std::string& path) { write_file(path, encode_checkpoint(p)); }

inline void load_checkpoint(const std::string& path, GanetParams& p) { decode_checkpoint(read_file(path), p); }

}  // namespace ganet
