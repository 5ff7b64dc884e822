// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ganet/ganet.hpp"
#include "straight_line.hpp"

namespace {

using namespace ganet;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Arr random_arr(Shape s, Rng& rng, double scale = 1.0) {
  Arr a(std::move(s));
  for (auto& v : a.data()) v = rng.uniform(-scale, scale);
  return a;
}

Index random_perm(std::size_t n, Rng& rng) {
  Index p(n);
  std::iota(p.begin(), p.end(), 0);
  rng.shuffle(p);
  return p;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ganet_accept_" + name)).string();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

// 1. finite-difference checks of every op and module
Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string failed;
  for (const auto& r : run_gradient_suite(0, 1e-4)) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed += " " + r.name;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failed.empty() && secs < 60.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu targets, worst rel err %.2e, %.1f s", gradient_suite().size(), worst, secs);
  o.detail = buf + (failed.empty() ? "" : ", failed:" + failed);
  return o;
}

// 2. subset attention against the full non-local oracle
Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  double worst_pass = 0, worst_block = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const RcabParams p = init_rcab(4, rng);
    const Arr f = random_arr({8, 4}, rng);
    worst_pass = std::max(worst_pass, max_abs_diff(rcab_pass(f.reshaped({1, 8, 4}), p.pass1).reshaped({8, 4}),
                                                   nonlocal_forward(f, p.pass1)));
    const ReorderPlan plan = make_plan(8, 8, seed);
    const Arr degenerate = linear(nonlocal_forward(f, p.pass1), p.pass2.value);
    worst_block = std::max(worst_block, max_abs_diff(rcab_block(f, plan, p), degenerate));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_pass <= 1e-10 && worst_block <= 1e-10 && secs < 5.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "pass vs nonlocal %.2e, single-row block %.2e, %.3f s", worst_pass, worst_block,
                secs);
  o.detail = buf;
  return o;
}

// 3. plain-loop replay of both modules
Outcome brute_force() {
  double worst_pig = 0, worst_pdg = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const PigParams pig = init_pig(3, rng);
    const PdgParams pdg = init_pdg(3, rng);
    const Arr f = random_arr({6, 3}, rng);
    const ReorderPlan a = make_plan(6, default_k1(6), derive_seed(seed, "a"));
    const ReorderPlan b = make_plan(6, default_k1(6), derive_seed(seed, "b"));
    worst_pig = std::max(worst_pig, straight::max_diff(straight::pig(straight::to_mat(f), pig), pig_forward(f, pig)));
    worst_pdg = std::max(worst_pdg, straight::max_diff(straight::pdg(straight::to_mat(f), a, b, pdg),
                                                       pdg_forward(f, std::make_pair(a, b), pdg)));
  }
  Outcome o;
  o.pass = worst_pig <= 1e-12 && worst_pdg <= 1e-12;
  char buf[128];
  std::snprintf(buf, sizeof buf, "point-independent %.2e, point-dependent %.2e", worst_pig, worst_pdg);
  o.detail = buf;
  return o;
}

double worst_row_sum_error(const Arr& a) {
  double worst = 0;
  const std::size_t k = a.last();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += a[r * k + j];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

// 4. stochastic rows and convex blending
Outcome normalization() {
  Rng rng(4);
  double worst_sum = 0, worst_outside = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.index(30), c = 1 + rng.index(8);
    const Arr f = random_arr({n, c}, rng, 5.0);
    worst_sum = std::max(worst_sum, worst_row_sum_error(softmax_rows(random_arr({n, c}, rng, 20.0))));
    const PigParams pig = init_pig(c, rng);
    worst_sum = std::max(worst_sum, worst_row_sum_error(attention_weights(f, pig)));
    const RcabPassParams pass = init_rcab_pass(c, rng);
    worst_sum = std::max(worst_sum, worst_row_sum_error(attention_map(f.reshaped({1, n, c}), pass)));
    const LinearParams sh = init_linear(c, 1, rng), sg = init_linear(c, 1, rng);
    const Arr h = random_arr({n, c}, rng, 5.0);
    worst_sum = std::max(worst_sum, worst_row_sum_error(softmax_rows(concat_last(linear(h, sh), linear(f, sg)))));
    const Arr y = pab(h, f, sh, sg);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double lo = std::min(h[i], f[i]), hi = std::max(h[i], f[i]);
      worst_outside = std::max({worst_outside, lo - y[i], y[i] - hi});
    }
  }
  Outcome o;
  o.pass = worst_sum <= 1e-10 && worst_outside <= 1e-12;
  char buf[128];
  std::snprintf(buf, sizeof buf, "worst row-sum error %.2e, worst blend overshoot %.2e", worst_sum,
                std::max(0.0, worst_outside));
  o.detail = buf;
  return o;
}

// 5. behaviour under reordering of the points
Outcome equivariance() {
  std::size_t pig_mismatch = 0, pdg_mismatch = 0;
  double worst_nonlocal = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t n = 5 + rng.index(40);
    const PigParams pig = init_pig(8, rng);
    const PdgParams pdg = init_pdg(8, rng);
    const Arr f = random_arr({n, 8}, rng);
    const Index perm = random_perm(n, rng);
    const Arr fp = gather_rows(f, perm);
    pig_mismatch += !(pig_forward(fp, pig) == gather_rows(pig_forward(f, pig), perm));
    const std::size_t k1 = 1 + rng.index(n);
    const auto plans = std::make_pair(make_plan(n, k1, seed), make_plan(n, default_k1(n), seed + 1000));
    const auto moved = std::make_pair(relabel(plans.first, perm), relabel(plans.second, perm));
    pdg_mismatch += !(pdg_forward(fp, moved, pdg) == gather_rows(pdg_forward(f, plans, pdg), perm));
    const Arr small = random_arr({5, 4}, rng);
    const Index p5 = random_perm(5, rng);
    const RcabPassParams pass = init_rcab_pass(4, rng);
    worst_nonlocal = std::max(worst_nonlocal, max_abs_diff(nonlocal_forward(gather_rows(small, p5), pass),
                                                           gather_rows(nonlocal_forward(small, pass), p5)));
  }
  Outcome o;
  o.pass = pig_mismatch == 0 && pdg_mismatch == 0 && worst_nonlocal <= 1e-10;
  char buf[160];
  std::snprintf(buf, sizeof buf, "inexact cases: point-independent %zu/50, point-dependent %zu/50; nonlocal %.2e",
                pig_mismatch, pdg_mismatch, worst_nonlocal);
  o.detail = buf;
  return o;
}

// 6. FLOP model and measured scaling
Outcome complexity() {
  const auto t0 = Clock::now();
  const FlopReport r = flop_counts(10000, 16, 100, 100);
  const bool ratio_ok = r.ratio == 0.04;

  BenchOptions opt;
  opt.sizes = {1024, 2048, 4096, 8192, 16384, 32768, 65536};
  opt.c = 16;
  opt.trials = 3;
  opt.nonlocal_cap = 8192;
  const auto rows = runtime_bench(opt);
  const auto s_rcab = loglog_slope(rows, "rcab", 4096, 65536);
  const auto s_nl = loglog_slope(rows, "nonlocal", 1024, 8192);
  bool faster = true;
  std::size_t common = 0;
  for (const auto& a : rows) {
    if (a.mechanism != "rcab" || !a.mean_ms) continue;
    for (const auto& b : rows) {
      if (b.mechanism == "nonlocal" && b.n == a.n && b.mean_ms) {
        ++common;
        faster = faster && *a.mean_ms < *b.mean_ms;
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ratio_ok && s_rcab && s_nl && *s_rcab >= 1.3 && *s_rcab <= 1.8 && *s_nl >= 1.8 && *s_nl <= 2.3 &&
           faster && common > 0 && secs < 300.0;
  char buf[200];
  std::snprintf(buf, sizeof buf, "ratio %.17g, slope rcab %.3f, nonlocal %.3f, rcab faster at %s of %zu sizes, %.0f s",
                r.ratio, s_rcab.value_or(NAN), s_nl.value_or(NAN), faster ? "all" : "not all", common, secs);
  o.detail = buf;
  return o;
}

struct LadderResult {
  std::vector<double> mean_acc;  // per variant, kAllVariants order
  double worst_run_s = 0;
};

// 7. ablation ladder on the default synthetic dataset
Outcome ladder() {
  const auto train = gen_dataset(200, 1024, 4, 1);
  const auto test = gen_dataset(50, 1024, 4, 2);
  const std::uint64_t seeds[] = {0, 1, 2};
  std::vector<double> acc(std::size(kAllVariants), 0.0);
  double worst_run = 0;
  for (std::size_t v = 0; v < std::size(kAllVariants); ++v) {
    for (std::uint64_t seed : seeds) {
      GanetConfig cfg;
      cfg.variant = kAllVariants[v];
      cfg.seed = seed;
      GanetParams p = init_params(cfg);
      const auto t0 = Clock::now();
      fit(train, p, cfg);
      worst_run = std::max(worst_run, seconds_since(t0));
      const double oa = evaluate(test, p, cfg).oa;
      acc[v] += oa / static_cast<double>(std::size(seeds));
      std::printf("  ladder %-10s seed %llu: test accuracy %.4f\n", std::string(variant_name(cfg.variant)).c_str(),
                  static_cast<unsigned long long>(seed), oa);
      std::fflush(stdout);
    }
  }
  const double full = acc.back(), base = acc.front();
  bool within = true;
  for (std::size_t v = 0; v + 1 < acc.size(); ++v) within = within && full >= acc[v] - 0.02;
  Outcome o;
  o.pass = full - base >= 0.10 && within && worst_run <= 600.0;
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << "mean accuracy";
  for (std::size_t v = 0; v < acc.size(); ++v) os << ' ' << variant_name(kAllVariants[v]) << '=' << acc[v];
  os << "; full - baseline = " << (full - base) * 100 << " points; slowest run " << worst_run << " s";
  o.detail = os.str();
  return o;
}

// 8. identical seeds, identical bytes
Outcome determinism() {
  GanetConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 5;
  const auto data = gen_dataset(3, 128, 4, 7);
  GanetParams a = init_params(cfg), b = init_params(cfg);
  fit(data, a, cfg);
  fit(data, b, cfg);
  const bool ckpt = fnv1a(encode_checkpoint(a)) == fnv1a(encode_checkpoint(b));

  const std::string pa = temp_path("det_a.gpcd"), pb = temp_path("det_b.gpcd");
  save_dataset(gen_dataset(4, 256, 4, 11), pa);
  save_dataset(gen_dataset(4, 256, 4, 11), pb);
  const bool dataset = fnv1a(read_file(pa)) == fnv1a(read_file(pb));
  std::filesystem::remove(pa);
  std::filesystem::remove(pb);

  BenchOptions opt;
  opt.sizes = {256, 512};
  opt.c = 8;
  opt.trials = 1;
  auto flop_column = [&] {
    std::ostringstream os;
    write_bench_csv(os, runtime_bench(opt));
    std::string out, line;
    std::istringstream in(os.str());
    while (std::getline(in, line)) out += line.substr(line.rfind(',') + 1) + "\n";
    return out;
  };
  const std::string f1 = flop_column(), f2 = flop_column();
  const bool flops = fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(f1.data()), f1.size())) ==
                     fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(f2.data()), f2.size()));
  Outcome o;
  o.pass = ckpt && dataset && flops;
  o.detail = std::string("checkpoint ") + (ckpt ? "same" : "DIFFERENT") + ", dataset file " +
             (dataset ? "same" : "DIFFERENT") + ", bench FLOP column " + (flops ? "same" : "DIFFERENT");
  return o;
}

// 9. save/load and expand/collapse
Outcome round_trips() {
  const auto data = gen_dataset(5, 300, 4, 13);
  const std::string dpath = temp_path("rt.gpcd"), cpath = temp_path("rt.bin");
  save_dataset(data, dpath);
  const bool dataset = load_dataset(dpath) == data;

  GanetConfig cfg;
  cfg.seed = 21;
  const GanetParams p = init_params(cfg);
  save_checkpoint(p, cpath);
  GanetConfig other;
  other.seed = 22;
  GanetParams q = init_params(other);
  load_checkpoint(cpath, q);
  bool ckpt = true;
  auto pt = named_tensors(p);
  auto qt = named_tensors(q);
  for (std::size_t i = 0; i < pt.size(); ++i) ckpt = ckpt && *pt[i].second == *qt[i].second;
  std::filesystem::remove(dpath);
  std::filesystem::remove(cpath);

  bool reorder = true;
  Rng rng(9);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t n = 1 + rng.index(200);
    const ReorderPlan plan = make_plan(n, 1 + rng.index(n), seed);
    const Arr f = random_arr({n, 5}, rng);
    reorder = reorder && collapse(expand(f, plan), plan) == f;
  }
  Outcome o;
  o.pass = dataset && ckpt && reorder;
  o.detail = std::string("dataset ") + (dataset ? "exact" : "CHANGED") + ", checkpoint " +
             (ckpt ? "exact" : "CHANGED") + ", collapse(expand) over 100 plans " + (reorder ? "exact" : "CHANGED");
  return o;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"gradient checks", gradients},
      {"oracle equivalence", oracle_equivalence},
      {"brute-force replay", brute_force},
      {"normalization invariants", normalization},
      {"equivariance", equivariance},
      {"complexity scaling", complexity},
      {"ablation ladder", ladder},
      {"determinism", determinism},
      {"round trips", round_trips},
  };
  int failures = 0;
  for (std::size_t i = 0; i < std::size(criteria); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("CRITERION %zu %s: %s (%s)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, std::size(criteria));
  return failures ? 1 : 0;
}
