#pragma once

// Reference full non-local attention, closed-form FLOP models for non-local
// vs. random cross attention, and the wall-clock benchmark that compares them.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <new>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "attn_global_dependent.hpp"
#include "ndarr.hpp"
#include "nn_layers.hpp"
#include "reorder.hpp"
#include "rng.hpp"

namespace ganet {

// softmax(K Q^T) V over all N points, with the same K/Q/V parameterization as
// one RCAB pass.
template <Value T>
T nonlocal_forward(const T& f, const RcabPassParams& p) {
  if (f.shape().size() != 2) throw ShapeError("nonlocal_forward: expected [N,C], got " + shape_str(f.shape()));
  const std::size_t n = f.shape()[0], c = f.shape()[1];
  return reshape(rcab_pass(reshape(f, {1, n, c}), p), {n, c});
}

// Same values as the generic path; normalizes the N x N score matrix in place
// so peak memory is one N x N buffer.
inline Arr nonlocal_forward(const Arr& f, const RcabPassParams& p) {
  if (f.rank() != 2) throw ShapeError("nonlocal_forward: expected [N,C], got " + shape_str(f.shape()));
  const std::size_t n = f.extent(0), c = f.extent(1);
  const Arr x = f.reshaped({1, n, c});
  Arr attn = kernel::matmul_bt(linear(x, p.key), linear(x, p.query));
  kernel::softmax_rows_in_place(attn);
  return kernel::matmul(attn, linear(x, p.value)).reshaped({n, c});
}

// Multiply-add counts as 2 FLOPs. Attention FLOPs cover the score product and
// the weighted sum only; K/Q/V projections are reported separately.
struct FlopReport {
  std::size_t n = 0, c = 0, k1 = 0, k2 = 0, blocks = 0;
  double flops_nonlocal = 0;
  double flops_rcab = 0;
  double ratio = 0;
  double projection_flops_nonlocal = 0;
  double projection_flops_rcab = 0;
  std::size_t weights_per_point_nonlocal = 0;
  std::size_t weights_per_point_rcab = 0;  // per block
};

inline FlopReport flop_counts(std::size_t n, std::size_t c, std::size_t k1, std::size_t k2,
                              std::size_t blocks = 2) {
  if (n == 0 || c == 0 || k1 == 0 || k2 == 0 || blocks == 0) {
    throw std::invalid_argument("flop_counts: extents must be positive");
  }
  if (k1 * k2 < n) {
    throw std::invalid_argument("flop_counts: k1*k2=" + std::to_string(k1 * k2) + " < n=" + std::to_string(n));
  }
  const double nn = static_cast<double>(n), cc = static_cast<double>(c);
  const double nhat = static_cast<double>(k1 * k2);
  FlopReport r;
  r.n = n;
  r.c = c;
  r.k1 = k1;
  r.k2 = k2;
  r.blocks = blocks;
  r.flops_nonlocal = 2.0 * (2.0 * nn * nn * cc);
  const double per_block = 2.0 * (2.0 * nhat * static_cast<double>(k1) * cc) +
                           2.0 * (2.0 * nhat * static_cast<double>(k2) * cc);
  r.flops_rcab = static_cast<double>(blocks) * per_block;
  r.ratio = r.flops_rcab / r.flops_nonlocal;
  r.projection_flops_nonlocal = 3.0 * 2.0 * nn * cc * cc;
  r.projection_flops_rcab = static_cast<double>(blocks) * 2.0 * 3.0 * 2.0 * nhat * cc * cc;
  r.weights_per_point_nonlocal = n;
  r.weights_per_point_rcab = k1 + k2;
  return r;
}

struct BenchRow {
  std::size_t n = 0;
  std::string mechanism;  // "rcab" or "nonlocal"
  std::optional<double> mean_ms;
  std::optional<double> stddev_ms;
  double flops = 0;
  std::string note;  // reason the size was skipped, if any
};

struct BenchOptions {
  std::vector<std::size_t> sizes;
  std::size_t c = 16;
  std::size_t trials = 3;
  std::uint64_t seed = 0;
  std::size_t nonlocal_cap = 8192;
  bool parallel_trials = false;
};

namespace detail {

struct TimingStats {
  double mean = 0, stddev = 0;
};

template <class Fn>
TimingStats time_trials(Fn&& fn, std::size_t trials, bool parallel) {
  using clock = std::chrono::steady_clock;
  fn();  // warmup, discarded
  std::vector<double> ms(trials);
  auto one = [&](std::size_t t) {
    const auto t0 = clock::now();
    fn();
    ms[t] = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };
  if (parallel) {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < trials; ++t) pool.emplace_back(one, t);
    for (auto& th : pool) th.join();
  } else {
    for (std::size_t t = 0; t < trials; ++t) one(t);
  }
  TimingStats s;
  for (double v : ms) s.mean += v;
  s.mean /= static_cast<double>(trials);
  for (double v : ms) s.stddev += (v - s.mean) * (v - s.mean);
  s.stddev = trials > 1 ? std::sqrt(s.stddev / static_cast<double>(trials - 1)) : 0.0;
  return s;
}

inline Arr random_features(std::size_t n, std::size_t c, Rng& rng) {
  Arr f({n, c});
  for (auto& v : f.data()) v = rng.uniform(-1.0, 1.0);
  return f;
}

}  // namespace detail

// Forward-only timings of one rcab_block (k1 = ceil(sqrt(N))) and of the
// non-local oracle at each size. Plan construction is outside the timed
// region. Non-local is skipped above `nonlocal_cap`.
inline std::vector<BenchRow> runtime_bench(const BenchOptions& opt) {
  if (opt.trials == 0) throw std::invalid_argument("runtime_bench: trials must be >= 1");
  for (std::size_t i = 1; i < opt.sizes.size(); ++i) {
    if (opt.sizes[i] < opt.sizes[i - 1]) throw std::invalid_argument("runtime_bench: sizes must be sorted ascending");
  }
  Rng init(derive_seed(opt.seed, "init"));
  const RcabParams rcab = init_rcab(opt.c, init);
  const RcabPassParams& nl = rcab.pass1;

  std::vector<BenchRow> rows;
  for (std::size_t n : opt.sizes) {
    Rng data(derive_seed(opt.seed, "data", n));
    const Arr f = detail::random_features(n, opt.c, data);
    const std::size_t k1 = default_k1(n);
    const ReorderPlan plan = make_plan(n, k1, derive_seed(opt.seed, "plan", n));

    BenchRow r{n, "rcab", {}, {}, flop_counts(n, opt.c, plan.k1, plan.k2, 1).flops_rcab, ""};
    try {
      const auto s = detail::time_trials([&] { return rcab_block(f, plan, rcab); }, opt.trials, opt.parallel_trials);
      r.mean_ms = s.mean;
      r.stddev_ms = s.stddev;
    } catch (const std::bad_alloc&) {
      r.note = "skipped: out of memory";
    }
    rows.push_back(r);

    BenchRow q{n, "nonlocal", {}, {}, flop_counts(n, opt.c, n, 1, 1).flops_nonlocal, ""};
    if (n > opt.nonlocal_cap) {
      q.note = "skipped: quadratic memory";
    } else {
      try {
        const auto s = detail::time_trials([&] { return nonlocal_forward(f, nl); }, opt.trials, opt.parallel_trials);
        q.mean_ms = s.mean;
        q.stddev_ms = s.stddev;
      } catch (const std::bad_alloc&) {
        q.note = "skipped: out of memory";
      }
    }
    rows.push_back(q);
  }
  return rows;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "n,mechanism,mean_ms,stddev_ms,flops\n";
  char buf[64];
  for (const auto& r : rows) {
    os << r.n << ',' << r.mechanism << ',';
    if (r.mean_ms) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f", *r.mean_ms, *r.stddev_ms);
      os << buf;
    } else {
      os << r.note << ',';
    }
    std::snprintf(buf, sizeof buf, "%.0f", r.flops);
    os << ',' << buf << '\n';
  }
}

// Least-squares slope of log(mean_ms) against log(n) for one mechanism,
// restricted to measured rows with n in [n_min, n_max].
inline std::optional<double> loglog_slope(const std::vector<BenchRow>& rows, const std::string& mechanism,
                                          std::size_t n_min = 0, std::size_t n_max = SIZE_MAX) {
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    if (r.mechanism != mechanism || !r.mean_ms || r.n < n_min || r.n > n_max || *r.mean_ms <= 0) continue;
    xs.push_back(std::log(static_cast<double>(r.n)));
    ys.push_back(std::log(*r.mean_ms));
  }
  if (xs.size() < 2) return std::nullopt;
  const double m = static_cast<double>(xs.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
  }
  const double mx = sx / m, my = sy / m;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (sxx == 0) return std::nullopt;
  return sxy / sxx;
}

}  // namespace ganet
