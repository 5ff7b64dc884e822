#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "ganet/ganet.hpp"

namespace ganet {
namespace {

Arr random_arr(Shape s, Rng& rng) {
  Arr a(std::move(s));
  for (auto& v : a.data()) v = rng.uniform(-1.0, 1.0);
  return a;
}

TEST(Nonlocal, SinglePointIsValueProjection) {
  Rng rng(1);
  const RcabPassParams p = init_rcab_pass(4, rng);
  const Arr f = random_arr({1, 4}, rng);
  EXPECT_LE(max_abs_diff(nonlocal_forward(f, p), linear(f, p.value)), 1e-15);
}

TEST(Nonlocal, EqualsOneBatchPass) {
  Rng rng(2);
  const RcabPassParams p = init_rcab_pass(4, rng);
  const Arr f = random_arr({8, 4}, rng);
  EXPECT_LE(max_abs_diff(nonlocal_forward(f, p), rcab_pass(f.reshaped({1, 8, 4}), p).reshaped({8, 4})), 1e-10);
}

TEST(Nonlocal, GenericAndInPlacePathsAgree) {
  Rng rng(3);
  const RcabPassParams p = init_rcab_pass(5, rng);
  const Arr f = random_arr({12, 5}, rng);
  Graph g;
  EXPECT_LE(max_abs_diff(nonlocal_forward(g.constant(f), p).value(), nonlocal_forward(f, p)), 1e-14);
}

TEST(Nonlocal, PermutationEquivariant) {
  Rng rng(4);
  const RcabPassParams p = init_rcab_pass(4, rng);
  const Arr f = random_arr({5, 4}, rng);
  Index perm(5);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  EXPECT_LE(max_abs_diff(nonlocal_forward(gather_rows(f, perm), p), gather_rows(nonlocal_forward(f, p), perm)),
            1e-10);
}

TEST(Flops, TenThousandPoints) {
  const FlopReport r = flop_counts(10000, 16, 100, 100);
  EXPECT_EQ(r.flops_nonlocal, 6.4e9);
  EXPECT_EQ(r.flops_rcab, 2.56e8);
  EXPECT_EQ(r.ratio, 0.04);
  EXPECT_EQ(r.weights_per_point_rcab, 200u);
  EXPECT_EQ(r.weights_per_point_nonlocal, 10000u);
}

TEST(Flops, SingleRowDegenerateCase) {
  // k1 = N, k2 = 1: per block 4N^2C + 4NC
  const FlopReport r = flop_counts(64, 8, 64, 1, 1);
  EXPECT_EQ(r.flops_rcab, 4.0 * 64 * 64 * 8 + 4.0 * 64 * 8);
  EXPECT_EQ(r.flops_nonlocal, 4.0 * 64 * 64 * 8);
}

TEST(Flops, PaddedGridCountsDuplicates) {
  const FlopReport r = flop_counts(10, 2, 3, 4, 1);
  EXPECT_EQ(r.flops_rcab, 4.0 * 12 * 3 * 2 + 4.0 * 12 * 4 * 2);
}

TEST(Flops, InvalidArguments) {
  EXPECT_THROW(flop_counts(10, 4, 3, 3), std::invalid_argument);
  EXPECT_THROW(flop_counts(0, 4, 1, 1), std::invalid_argument);
}

TEST(Bench, SmallRunShapeAndCap) {
  BenchOptions opt;
  opt.sizes = {64, 256};
  opt.c = 4;
  opt.trials = 2;
  opt.nonlocal_cap = 64;
  const auto rows = runtime_bench(opt);
  ASSERT_EQ(rows.size(), 4u);
  std::size_t skipped = 0;
  for (const auto& r : rows) {
    if (r.mechanism == "nonlocal" && r.n == 256) {
      EXPECT_FALSE(r.mean_ms.has_value());
      EXPECT_EQ(r.note, "skipped: quadratic memory");
      ++skipped;
    } else {
      ASSERT_TRUE(r.mean_ms.has_value());
      EXPECT_GE(*r.mean_ms, 0.0);
    }
  }
  EXPECT_EQ(skipped, 1u);
  std::ostringstream os;
  write_bench_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "n,mechanism,mean_ms,stddev_ms,flops");
}

TEST(Bench, LoglogSlopeOfExactPowerLaw) {
  std::vector<BenchRow> rows;
  for (std::size_t n : {100u, 200u, 400u, 800u}) {
    BenchRow r;
    r.n = n;
    r.mechanism = "x";
    r.mean_ms = 3.0 * std::pow(static_cast<double>(n), 1.5);
    rows.push_back(r);
  }
  EXPECT_NEAR(*loglog_slope(rows, "x"), 1.5, 1e-12);
  EXPECT_NEAR(*loglog_slope(rows, "x", 200, 400), 1.5, 1e-12);
  EXPECT_FALSE(loglog_slope(rows, "x", 800, 800).has_value());
}

}  // namespace
}  // namespace ganet
