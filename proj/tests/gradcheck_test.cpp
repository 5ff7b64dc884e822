#include <gtest/gtest.h>

#include "ganet/gradcheck.hpp"

namespace ganet {
namespace {

TEST(GradientSuite, AllTargetsPass) {
  for (const auto& r : run_gradient_suite(0)) EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
}

TEST(GradientSuite, SecondSeedPasses) {
  for (const auto& r : run_gradient_suite(17)) EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
}

TEST(GradientSuite, InjectedFaultIsCaught) {
  for (const auto& r : run_gradient_suite(0, kGradTolerance, "layer_norm")) {
    EXPECT_EQ(r.passed, r.name != "layer_norm") << r.name;
  }
}

TEST(GradientSuite, CoversEveryModule) {
  std::vector<std::string> names;
  for (const auto& t : gradient_suite()) names.push_back(t.name);
  for (const char* want : {"pig_forward", "rcab_block", "pab", "pdg_forward", "nonlocal_forward", "model.encoder",
                           "model.head", "loss_ce", "layer_norm", "softmax_rows", "pool"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), want), names.end()) << want;
  }
}

TEST(MaxGradientError, QuadraticExact) {
  Arr x({3}, std::vector<double>{1.0, -2.0, 0.5});
  Arr* wrt[] = {&x};
  const double err = max_gradient_error([&](Graph& g) {
    const Var v = g.param(x);
    return sum(mul(v, v));
  }, wrt);
  EXPECT_LT(err, 1e-8);
}

}  // namespace
}  // namespace ganet
