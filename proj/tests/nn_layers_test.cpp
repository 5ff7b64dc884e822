#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ganet/nn_layers.hpp"

namespace ganet {
namespace {

Arr random_arr(Shape s, Rng& rng) {
  Arr a(std::move(s));
  for (auto& v : a.data()) v = rng.uniform(-1.0, 1.0);
  return a;
}

Arr permute_rows(const Arr& a, const Index& perm) { return gather_rows(a, perm); }

Index random_perm(std::size_t n, Rng& rng) {
  Index p(n);
  std::iota(p.begin(), p.end(), 0);
  rng.shuffle(p);
  return p;
}

TEST(Linear, AffinePerRow) {
  LinearParams p{Arr::matrix({{1, 2}, {3, 4}}), Arr({2}, std::vector<double>{0.5, -1})};
  const Arr y = linear(Arr::matrix({{1, 1}, {0, 2}}), p);
  EXPECT_EQ(y, Arr::matrix({{4.5, 5}, {6.5, 7}}));
}

TEST(Linear, BatchedInputKeepsLeadingAxes) {
  Rng rng(1);
  const LinearParams p = init_linear(3, 5, rng);
  const Arr x = random_arr({2, 4, 3}, rng);
  const Arr y = linear(x, p);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 5}));
  EXPECT_EQ(y.reshaped({8, 5}), linear(x.reshaped({8, 3}), p));
}

TEST(Linear, WrongWidthThrows) {
  Rng rng(2);
  const LinearParams p = init_linear(3, 2, rng);
  EXPECT_THROW(linear(Arr({4, 5}), p), ShapeError);
}

TEST(InitLinear, WithinFanInBound) {
  Rng rng(3);
  const LinearParams p = init_linear(16, 8, rng);
  const double bound = 0.25;
  for (double v : p.weight.data()) EXPECT_LE(std::abs(v), bound);
  for (double v : p.bias.data()) EXPECT_LE(std::abs(v), bound);
}

TEST(LayerNormModule, ZeroMeanUnitVariance) {
  Rng rng(4);
  const Arr x = random_arr({5, 16}, rng);
  const Arr y = layer_norm(x, init_layer_norm(16));
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += y.at(r, c);
    mean /= 16;
    for (std::size_t c = 0; c < 16; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
    var /= 16;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(LayerNormModule, RejectsNonPositiveEpsilon) {
  LayerNormParams p = init_layer_norm(3);
  p.epsilon = 0.0;
  EXPECT_THROW(layer_norm(Arr({1, 3}), p), std::invalid_argument);
}

TEST(FcStack, ChainMismatchNamesLayer) {
  Rng rng(5);
  std::vector<FcLayer> layers = {{init_linear(4, 3, rng)}, {init_linear(5, 2, rng)}};
  try {
    fc_stack(Arr({2, 4}), std::span<const FcLayer>(layers));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
}

TEST(FcStack, ActivationsPerLayer) {
  Rng rng(6);
  const std::size_t dims[] = {3, 4, 5, 2};
  const auto layers = init_fc_stack(dims, rng);
  ASSERT_EQ(layers.size(), 3u);
  EXPECT_EQ(layers[0].activation, Activation::relu);
  EXPECT_EQ(layers[1].activation, Activation::relu);
  EXPECT_EQ(layers[2].activation, Activation::none);
}

TEST(FcStack, RowPermutationEquivariant) {
  Rng rng(7);
  const std::size_t dims[] = {6, 8, 4};
  const auto layers = init_fc_stack(dims, rng, Activation::relu);
  const Arr x = random_arr({9, 6}, rng);
  const Index perm = random_perm(9, rng);
  const std::span<const FcLayer> s(layers);
  EXPECT_EQ(fc_stack(permute_rows(x, perm), s), permute_rows(fc_stack(x, s), perm));
}

TEST(SoftmaxRows, RowsSumToOne) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    Arr x = random_arr({7, 11}, rng);
    for (auto& v : x.data()) v *= 30.0;
    const Arr y = softmax_rows(x);
    for (std::size_t r = 0; r < 7; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 11; ++c) {
        EXPECT_GE(y.at(r, c), 0.0);
        s += y.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(NamedTensors, VisitOrderAndCount) {
  Rng rng(9);
  const std::size_t dims[] = {2, 3, 1};
  auto layers = init_fc_stack(dims, rng);
  const auto named = named_tensors(layers, "enc");
  ASSERT_EQ(named.size(), 4u);
  EXPECT_EQ(named[0].first, "enc.0.weight");
  EXPECT_EQ(named[3].first, "enc.1.bias");
  EXPECT_EQ(parameter_count(layers), 2u * 3 + 3 + 3 * 1 + 1);
}

}  // namespace
}  // namespace ganet
