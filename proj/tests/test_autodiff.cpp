#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "icelab/errors.hpp"
#include "icelab/graph.hpp"
#include "icelab/param_set.hpp"
#include "test_support.hpp"

namespace icelab {
namespace {

using ad::Graph;
using ad::Tensor;
using ad::Var;
using testing::check_gradients;

constexpr int kSeeds = 20;

Tensor random_tensor(Rng& rng, ad::Shape shape, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(ad::shape_size(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Contracts an op's output with fixed random weights so every output entry
// carries a distinct upstream gradient.
Var weighted_sum(Graph& g, Var out, std::uint64_t seed) {
  Rng rng(seed ^ 0x5bd1e995ULL);
  Var w = g.constant(random_tensor(rng, g.shape(out)));
  return g.sum(g.mul(out, w));
}

struct OpCase {
  const char* name;
  std::vector<ad::Shape> inputs;
  std::function<Var(Graph&, std::vector<Var>&)> build;
};

class OpGradient : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
  return {
      {"add", {{3, 4}, {3, 4}}, [](Graph& g, auto& x) { return g.add(x[0], x[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](Graph& g, auto& x) { return g.sub(x[0], x[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](Graph& g, auto& x) { return g.mul(x[0], x[1]); }},
      {"scale", {{2, 5}}, [](Graph& g, auto& x) { return g.scale(x[0], -1.7); }},
      {"add_row", {{3, 4}, {4}}, [](Graph& g, auto& x) { return g.add_row(x[0], x[1]); }},
      {"matmul", {{3, 4}, {4, 5}}, [](Graph& g, auto& x) { return g.matmul(x[0], x[1]); }},
      {"matmul_nt", {{3, 4}, {5, 4}}, [](Graph& g, auto& x) { return g.matmul_nt(x[0], x[1]); }},
      {"tanh", {{3, 4}}, [](Graph& g, auto& x) { return g.tanh(x[0]); }},
      {"gelu", {{3, 4}}, [](Graph& g, auto& x) { return g.gelu(x[0]); }},
      {"layer_norm", {{3, 5}, {5}, {5}},
       [](Graph& g, auto& x) { return g.layer_norm_rows(x[0], x[1], x[2]); }},
      {"causal_softmax", {{4, 4}}, [](Graph& g, auto& x) { return g.causal_softmax_rows(x[0]); }},
      {"log_softmax", {{3, 6}}, [](Graph& g, auto& x) { return g.log_softmax_rows(x[0]); }},
      {"gather_rows", {{5, 3}},
       [](Graph& g, auto& x) {
         const int rows[] = {4, 0, 4, 2};
         return g.gather_rows(x[0], rows);
       }},
      {"slice_rows", {{5, 3}}, [](Graph& g, auto& x) { return g.slice_rows(x[0], 1, 4); }},
      {"slice_cols", {{3, 6}}, [](Graph& g, auto& x) { return g.slice_cols(x[0], 2, 5); }},
      {"concat_cols", {{3, 2}, {3, 4}},
       [](Graph& g, auto& x) {
         const Var parts[] = {x[0], x[1], x[0]};
         return g.concat_cols(parts);
       }},
      {"pick", {{3, 4}},
       [](Graph& g, auto& x) {
         const std::pair<std::size_t, std::size_t> at[] = {{0, 1}, {2, 3}, {0, 1}};
         return g.pick(x[0], at);
       }},
      {"sum", {{3, 4}}, [](Graph& g, auto& x) { return g.sum(x[0]); }},
      {"kl_onehot_weighted", {{1, 3}},
       [](Graph& g, auto& x) {
         // Fixed target log-weights; the model side carries the gradient.
         Var t = g.constant({1, 3}, {std::log(0.2), std::log(0.5), std::log(0.3)});
         return g.kl_onehot_weighted(t, g.log_softmax_rows(x[0]));
       }},
      {"attention_chain", {{4, 6}, {6, 6}},
       [](Graph& g, auto& x) {
         Var q = g.matmul(x[0], x[1]);
         Var p = g.causal_softmax_rows(g.scale(g.matmul_nt(q, x[0]), 0.4));
         return g.matmul(p, x[0]);
       }},
  };
}

TEST_P(OpGradient, MatchesCentralDifferencesOverSeeds) {
  const auto cases = op_cases();
  const auto& c = cases[static_cast<std::size_t>(GetParam())];
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 131 + 7);
    ParamSet params;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
      params.add("x" + std::to_string(i), random_tensor(rng, c.inputs[i]));
    }
    auto loss = [&](Graph& g, const Binding& b) {
      std::vector<Var> x;
      for (std::size_t i = 0; i < c.inputs.size(); ++i) x.push_back(b.at("x" + std::to_string(i)));
      return weighted_sum(g, c.build(g, x), static_cast<std::uint64_t>(seed));
    };
    const auto r = check_gradients(params, {}, loss);
    EXPECT_EQ(r.failures, 0u) << c.name << " seed " << seed << " worst rel " << r.worst_relative;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient,
                         ::testing::Range(0, static_cast<int>(op_cases().size())),
                         [](const auto& info) {
                           return std::string(op_cases()[static_cast<std::size_t>(info.param)].name);
                         });

TEST(Graph, ForwardValuesMatchHandComputation) {
  Graph g(false);
  Var a = g.constant({2, 2}, {1, 2, 3, 4});
  Var b = g.constant({2, 2}, {5, 6, 7, 8});
  Var p = g.matmul(a, b);
  const std::vector<double> want{19, 22, 43, 50};
  ASSERT_EQ(g.value(p).size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g.value(p)[i], want[i]);

  Var ls = g.log_softmax_rows(g.constant({1, 3}, {0, 0, 0}));
  for (double v : g.value(ls)) EXPECT_NEAR(v, -std::log(3.0), 1e-15);

  Var cs = g.causal_softmax_rows(g.constant({2, 2}, {9, 9, 1, 1}));
  EXPECT_DOUBLE_EQ(g.value(cs)[0], 1.0);
  EXPECT_DOUBLE_EQ(g.value(cs)[1], 0.0);
  EXPECT_DOUBLE_EQ(g.value(cs)[2], 0.5);
}

TEST(Graph, LogSoftmaxIsStableForLargeLogits) {
  Graph g(false);
  Var ls = g.log_softmax_rows(g.constant({1, 2}, {1000.0, 0.0}));
  EXPECT_DOUBLE_EQ(g.value(ls)[0], 0.0);
  EXPECT_NEAR(g.value(ls)[1], -1000.0, 1e-9);
}

TEST(Graph, SharedSubexpressionAccumulatesGradient) {
  Tensor x({1}, {3.0}, true);
  Graph g;
  Var v = g.leaf(x);
  g.backward(g.sum(g.mul(v, v)));
  ASSERT_TRUE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Graph, DetachBlocksGradient) {
  Tensor x({1}, {2.0}, true);
  Graph g;
  Var v = g.leaf(x);
  g.backward(g.sum(g.mul(v, g.detach(v))));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Graph, BackwardRejectsNonScalarLoss) {
  Tensor x({2}, {1.0, 2.0}, true);
  Graph g;
  Var v = g.leaf(x);
  EXPECT_THROW(g.backward(v), ContractViolation);
}

TEST(Graph, BackwardTwiceIsAnError) {
  Tensor x({1}, {1.0}, true);
  Graph g;
  Var l = g.sum(g.leaf(x));
  g.backward(l);
  EXPECT_THROW(g.backward(l), ContractViolation);
}

TEST(Graph, ShapeErrors) {
  Graph g;
  Var a = g.constant({2, 3}, std::vector<double>(6, 1.0));
  Var b = g.constant({2, 2}, std::vector<double>(4, 1.0));
  EXPECT_THROW(g.add(a, b), ShapeError);
  EXPECT_THROW(g.matmul(a, b), ShapeError);
  EXPECT_THROW(g.log_softmax_rows(g.constant({2, 2, 1}, std::vector<double>(4, 0.0))), ShapeError);
  EXPECT_THROW(g.constant({3}, {1.0}), ShapeError);
  EXPECT_THROW(g.slice_rows(a, 1, 5), ShapeError);
  const int rows[] = {7};
  EXPECT_THROW(g.gather_rows(a, rows), ShapeError);
}

TEST(Graph, KlRejectsTargetThatRequiresGrad) {
  Tensor t({1, 2}, {0.0, 0.0}, true);
  Graph g;
  Var tv = g.leaf(t);
  EXPECT_THROW(g.kl_onehot_weighted(tv, g.log_softmax_rows(g.constant({1, 2}, {0.0, 1.0}))),
               ContractViolation);
}

TEST(ParamSetOps, ClipGradientsBoundsEveryEntry) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    ParamSet p;
    p.add("w", random_tensor(rng, {4, 4}));
    p.set_trainable({"w"});
    p.zero_grads();
    Tensor g = random_tensor(rng, {4, 4}, 5.0);
    p.at("w").accumulate_grad(g.values());
    const double bound = 0.25 + 0.1 * seed;
    clip_gradients(p, bound);
    EXPECT_LE(grad_inf_norm(p), bound);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (std::abs(g[i]) <= bound) EXPECT_DOUBLE_EQ(p.at("w").grad()[i], g[i]);
    }
  }
  ParamSet p;
  EXPECT_THROW(clip_gradients(p, 0.0), ConfigError);
  EXPECT_THROW(clip_gradients(p, -1.0), ConfigError);
}

TEST(ParamSetOps, ClampToBallIsExactAndIdempotent) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) + 100);
    ParamSet origin;
    origin.add("w", random_tensor(rng, {6, 3}, 10.0));
    ParamSet p = origin.snapshot();
    for (auto& v : p.at("w").values()) v += std::normal_distribution<double>(0.0, 1e-3)(rng);
    const double radius = 5e-4;
    clamp_to_ball(p, origin, radius, {"w"});
    EXPECT_LE(max_abs_difference(p, origin, {"w"}), radius);
    ParamSet again = p.snapshot();
    clamp_to_ball(again, origin, radius, {"w"});
    EXPECT_TRUE(again.same_values(p));
  }
}

TEST(ParamSetOps, FiniteDifferenceRejectsNonFiniteObjective) {
  ParamSet p;
  p.add("w", Tensor({1}, {0.0}));
  auto f = [](const ParamSet& s) { return std::log(s.at("w")[0]); };
  EXPECT_THROW(finite_difference_gradient(f, p, 1e-4), NumericalError);
  EXPECT_THROW(finite_difference_gradient(f, p, 0.0), ConfigError);
}

TEST(ParamSetOps, FiniteDifferenceOfQuadraticIsExact) {
  ParamSet p;
  p.add("w", Tensor({3}, {1.0, -2.0, 0.5}));
  auto f = [](const ParamSet& s) {
    double acc = 0.0;
    for (double v : s.at("w").values()) acc += v * v;
    return acc;
  };
  const auto d = finite_difference_gradient(f, p, 1e-3);
  EXPECT_NEAR(d.at("w")[0], 2.0, 1e-9);
  EXPECT_NEAR(d.at("w")[1], -4.0, 1e-9);
  EXPECT_NEAR(d.at("w")[2], 1.0, 1e-9);
}

}  // namespace
}  // namespace icelab
