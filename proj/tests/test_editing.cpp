#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "icelab/editing.hpp"
#include "icelab/errors.hpp"
#include "icelab/exact.hpp"
#include "test_support.hpp"

namespace icelab {
namespace {

using testing::check_gradients;
using testing::random_model;
using testing::random_tokens;

constexpr int kVocab = 6;

struct Instance {
  Model live;
  Model target;
  TokenSeq context, query, x_star;
  int horizon;
};

// Random enumerable instance: vocab <= 6, horizon <= 3.
Instance make_instance(std::uint64_t seed, Architecture arch = Architecture::kTransformer1Block) {
  Rng rng(seed * 31 + 3);
  const int vocab = 4 + static_cast<int>(seed % 3);
  Instance in{random_model(arch, vocab, seed, 0.5), random_model(arch, vocab, seed + 1000, 0.5),
              random_tokens(rng, vocab, 1 + static_cast<int>(seed % 2)),
              random_tokens(rng, vocab, 1 + static_cast<int>((seed / 2) % 2)),
              random_tokens(rng, vocab, 1 + static_cast<int>((seed / 3) % 2)),
              1 + static_cast<int>(seed % 3)};
  return in;
}

TokenizedRecord record_of(const Instance& in) {
  TokenizedRecord r;
  r.query = in.query;
  r.target = in.x_star;
  r.contexts = {in.context};
  return r;
}

// Every loss is checked on each architecture, 20 seeds, vocab 6.
class LossGradients : public ::testing::TestWithParam<Architecture> {};

TEST_P(LossGradients, FtLoss) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model m = random_model(GetParam(), kVocab, seed);
    Rng rng(seed);
    auto q = random_tokens(rng, kVocab, 2), x = random_tokens(rng, kVocab, 2);
    auto r = check_gradients(m.params, {}, [&](ad::Graph& g, const Binding& b) {
      return ft_loss(g, b, m.config, q, x);
    });
    EXPECT_EQ(r.failures, 0u) << "seed " << seed << " worst rel " << r.worst_relative;
  }
}

TEST_P(LossGradients, IceSurrogateWithFixedSamples) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model m = random_model(GetParam(), kVocab, seed);
    Rng rng(seed + 50);
    auto q = random_tokens(rng, kVocab, 2), x = random_tokens(rng, kVocab, 1);
    std::vector<TokenSeq> comps{random_tokens(rng, kVocab, 3), random_tokens(rng, kVocab, 3),
                                random_tokens(rng, kVocab, 3)};
    auto r = check_gradients(m.params, {}, [&](ad::Graph& g, const Binding& b) {
      return g.add(ft_loss(g, b, m.config, q, x), completion_nll(g, b, m.config, q, x, comps));
    });
    EXPECT_EQ(r.failures, 0u) << "seed " << seed << " worst rel " << r.worst_relative;
    auto c = check_gradients(m.params, {}, [&](ad::Graph& g, const Binding& b) {
      return combined_sequence_nll(g, b, m.config, q, x, comps);
    });
    EXPECT_EQ(c.failures, 0u) << "seed " << seed << " worst rel " << c.worst_relative;
  }
}

TEST_P(LossGradients, IceLossAndStaticSampleLoss) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model m = random_model(GetParam(), kVocab, seed);
    Model theta0 = random_model(GetParam(), kVocab, seed + 77);
    Rng rng(seed + 90);
    auto c = random_tokens(rng, kVocab, 2), q = random_tokens(rng, kVocab, 1),
         x = random_tokens(rng, kVocab, 1);
    // A fresh generator per evaluation keeps the samples fixed.
    auto dyn = check_gradients(m.params, {}, [&](ad::Graph& g, const Binding& b) {
      Rng r(seed);
      return ice_loss(g, b, m.config, theta0, c, q, x, 4, 3, 1.0, r);
    });
    EXPECT_EQ(dyn.failures, 0u) << "seed " << seed << " worst rel " << dyn.worst_relative;
    auto st = check_gradients(m.params, {}, [&](ad::Graph& g, const Binding& b) {
      Rng r(seed);
      return sample_loss_static(g, b, m.config, theta0, c, q, x, 4, 3, 100.0, r);
    });
    EXPECT_EQ(st.failures, 0u) << "seed " << seed << " worst rel " << st.worst_relative;
  }
}

INSTANTIATE_TEST_SUITE_P(Architectures, LossGradients,
                         ::testing::Values(Architecture::kBigramTable, Architecture::kMlp,
                                           Architecture::kTransformer1Block),
                         [](const auto& info) {
                           std::string s = to_string(info.param);
                           for (auto& ch : s) if (ch == '-') ch = '_';
                           return s;
                         });

TEST(Losses, ContractsAndErrors) {
  Model m = random_model(Architecture::kMlp, kVocab, 1);
  ad::Graph g;
  Binding b = bind_constant(g, m.params);
  EXPECT_THROW(ft_loss(g, b, m.config, {2}, {}), ContractViolation);
  EXPECT_THROW(ft_loss_value(m, {2}, {}), ContractViolation);
  Rng rng(0);
  EXPECT_THROW(ice_loss(g, b, m.config, m, {2}, {3}, {4}, 0, 2, 1.0, rng), ConfigError);
  EXPECT_THROW(ice_loss(g, b, m.config, m, {2}, {3}, {4}, 2, 2, 0.0, rng), ConfigError);
  TokenSeq huge(static_cast<std::size_t>(m.config.context_window), 2);
  EXPECT_THROW(ice_loss(g, b, m.config, m, huge, {3}, {4}, 2, 2, 1.0, rng), ContextOverflow);
}

TEST(Losses, CombinedIsFtPlusCompletion) {
  Model m = random_model(Architecture::kTransformer1Block, kVocab, 2);
  std::vector<TokenSeq> comps{{2, 3}, {4, 5}};
  ad::Graph g(false);
  Binding b = bind_constant(g, m.params);
  const double combined = g.scalar(combined_sequence_nll(g, b, m.config, {3}, {4}, comps));
  const double parts = g.scalar(ft_loss(g, b, m.config, {3}, {4})) +
                       g.scalar(completion_nll(g, b, m.config, {3}, {4}, comps));
  EXPECT_NEAR(combined, parts, 1e-12);
}

TEST(ExactIdentities, FineTuningWithSamplingEqualsFineTuning) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto in = make_instance(seed);
    const double exact = ft_sampling_loss_exact(in.live, in.query, in.x_star, in.horizon);
    EXPECT_NEAR(exact, ft_loss_value(in.live, in.query, in.x_star), 1e-8) << "seed " << seed;
  }
}

TEST(ExactIdentities, CombinedObjectiveDecomposesIntoFtPlusKl) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto in = make_instance(seed);
    const double ft = ft_loss_value(in.live, in.query, in.x_star);
    const double kl = continuation_kl(in.target, with_bos({in.context, in.query, in.x_star}),
                                      in.live, with_bos({in.query, in.x_star}), in.horizon);
    EXPECT_GT(kl, 0.0);
    const double obj = combined_objective_exact(in.target, in.live, in.context, in.query,
                                                in.x_star, in.horizon);
    EXPECT_NEAR(obj, ft + kl, 1e-8) << "seed " << seed;
    // The expected NLL carries the target's completion entropy on top,
    // which does not depend on the live parameters.
    const double nll = expected_combined_nll_exact(in.target, in.live, in.context, in.query,
                                                   in.x_star, in.horizon);
    const double h =
        completion_entropy_exact(in.target, in.context, in.query, in.x_star, in.horizon);
    EXPECT_NEAR(nll, ft + kl + h, 1e-8) << "seed " << seed;
    Model other = random_model(Architecture::kTransformer1Block, in.live.config.vocab_size,
                               seed + 5000, 0.5);
    const double ft2 = ft_loss_value(other, in.query, in.x_star);
    const double kl2 = continuation_kl(in.target, with_bos({in.context, in.query, in.x_star}),
                                       other, with_bos({in.query, in.x_star}), in.horizon);
    const double nll2 = expected_combined_nll_exact(in.target, other, in.context, in.query,
                                                    in.x_star, in.horizon);
    EXPECT_NEAR(nll - (ft + kl), nll2 - (ft2 + kl2), 1e-8);
  }
}

TEST(ExactIdentities, KlIsZeroForIdenticalDistributionsAndNonnegative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto in = make_instance(seed);
    TokenSeq p = with_bos({in.query});
    EXPECT_NEAR(continuation_kl(in.live, p, in.live, p, in.horizon), 0.0, 1e-12);
    EXPECT_GE(continuation_kl(in.target, p, in.live, p, in.horizon), -1e-12);
  }
}

TEST(ExactIdentities, EnumerationGuard) {
  Model m = random_model(Architecture::kMlp, 9, 0);
  EXPECT_THROW(ft_sampling_loss_exact(m, {2}, {3}, 1), SizeError);
  Model small = random_model(Architecture::kMlp, 6, 0);
  EXPECT_THROW(ft_sampling_loss_exact(small, {2}, {3}, 5), SizeError);
  EXPECT_THROW(ft_sampling_loss_exact(small, {2}, {}, 1), ContractViolation);
}

TEST(OneHotExpectation, PicksOutTheTargetValue) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int vocab = 3 + static_cast<int>(seed % 4);
    const int len = 1 + static_cast<int>(seed % 3);
    std::map<TokenSeq, double> table;
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    auto f = [&](const TokenSeq& x) {
      auto it = table.find(x);
      if (it == table.end()) it = table.emplace(x, u(rng)).first;
      return it->second;
    };
    std::uniform_int_distribution<int> d(0, vocab - 1);
    TokenSeq y(static_cast<std::size_t>(len));
    for (auto& t : y) t = d(rng);
    const double e = expectation_over_sequences(
        vocab, len, [&](const TokenSeq& x) { return one_hot_weight(y, x); }, f);
    EXPECT_EQ(e, f(y));
  }
  EXPECT_EQ(one_hot_weight({1, 2}, {1, 2}), 1.0);
  EXPECT_EQ(one_hot_weight({1, 2}, {2, 1}), 0.0);
}

TEST(ConsistencyGap, ZeroWithoutContextAndPositiveOtherwise) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto in = make_instance(seed);
    EXPECT_NEAR(consistency_gap(in.live, {}, in.query, 2).value, 0.0, 1e-12);
    const auto gap = consistency_gap(in.live, in.context, in.query, 2);
    EXPECT_TRUE(gap.exact);
    EXPECT_GT(gap.value, 0.0);
    EXPECT_NEAR(gap.value,
                continuation_kl(in.live, with_bos({in.context, in.query}), in.live,
                                with_bos({in.query}), 2),
                1e-12);
  }
}

TEST(ConsistencyGap, GuardAndMonteCarloFallback) {
  Model m = random_model(Architecture::kMlp, 12, 4, 0.5);
  EXPECT_THROW(consistency_gap(m, {2}, {3}, 3), SizeError);
  GapOptions o;
  o.allow_monte_carlo = true;
  o.mc_samples = 20000;
  o.seed = 3;
  const auto mc = consistency_gap(m, {2}, {3}, 3, o);
  EXPECT_FALSE(mc.exact);
  EXPECT_GT(mc.standard_error, 0.0);
  const TokenSeq c{2}, q{3};
  const double exact = continuation_kl(m, with_bos({c, q}), m, with_bos({q}), 3);
  EXPECT_NEAR(mc.value, exact, 5 * mc.standard_error);
}

TEST(Variants, NamesAndTraits) {
  for (auto v : {Variant::kFt, Variant::kFtClamped, Variant::kFtSampling, Variant::kIceDynamic,
                 Variant::kIceStatic, Variant::kIceNoContext, Variant::kIceStaticNoContext})
    EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("ROME"), ConfigError);
  EXPECT_FALSE(traits(Variant::kFt).clamped);
  EXPECT_TRUE(traits(Variant::kIceDynamic).dynamic);
  EXPECT_FALSE(traits(Variant::kIceStatic).dynamic);
  EXPECT_FALSE(traits(Variant::kIceNoContext).context);
}

TEST(EditConfigTest, ValidationErrors) {
  auto bad = [](auto mutate) {
    EditConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](EditConfig& c) { c.clip_grad = 0.0; });
  bad([](EditConfig& c) { c.lr = -1.0; });
  bad([](EditConfig& c) { c.samples = 0; });
  bad([](EditConfig& c) { c.temperature = 0.0; });
  bad([](EditConfig& c) { c.clamp_radius = 0.0; });
  bad([](EditConfig& c) { c.max_steps = 0; });
  bad([](EditConfig& c) { c.lambda = -0.5; });
  bad([](EditConfig& c) { c.top_k = -1; });
  EXPECT_NO_THROW(EditConfig{}.validate());
}

TEST(VariantLattice, StaticTargetsMatchDynamicAtTheFirstStep) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto in = make_instance(seed);
    EditConfig c;
    c.sample_len = in.horizon;
    c.lr = 0.05;
    c.max_steps = 1;
    c.seed = seed;
    c.variant = Variant::kIceDynamic;
    auto dyn = ice_edit(in.live, record_of(in), c);
    c.variant = Variant::kIceStatic;
    auto st = ice_edit(in.live, record_of(in), c);
    EXPECT_EQ(dyn.loss_trace[0].combined, st.loss_trace[0].combined) << seed;
    EXPECT_TRUE(dyn.final_params.same_values(st.final_params)) << seed;
  }
}

TEST(VariantLattice, NoContextIceIsFineTuningWithSampling) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto in = make_instance(seed);
    // Exact per-step objective with the live model as its own target.
    const double obj =
        combined_objective_exact(in.live, in.live, {}, in.query, in.x_star, in.horizon);
    EXPECT_NEAR(obj, ft_sampling_loss_exact(in.live, in.query, in.x_star, in.horizon), 1e-8);
    EXPECT_NEAR(obj, ft_loss_value(in.live, in.query, in.x_star), 1e-8);

    EditConfig c;
    c.sample_len = in.horizon;
    c.lr = 0.05;
    c.max_steps = 3;
    c.seed = seed;
    c.variant = Variant::kIceNoContext;
    auto ice = ice_edit(in.live, record_of(in), c);
    c.variant = Variant::kFtSampling;
    auto fts = ice_edit(in.live, record_of(in), c);
    EXPECT_EQ(ice.loss_trace[0].combined, fts.loss_trace[0].combined) << seed;
  }
}

TEST(IceEdit, ClampHoldsAfterEveryStep) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto in = make_instance(seed);
    for (Variant v : {Variant::kIceDynamic, Variant::kIceStatic, Variant::kFtClamped}) {
      EditConfig c;
      c.variant = v;
      c.lr = 0.05;  // large steps so the ball binds
      c.max_steps = 8;
      c.sample_len = in.horizon;
      c.seed = seed;
      int calls = 0;
      auto out = ice_edit(in.live, record_of(in), c, [&](const StepRecord& r, const Model& live) {
        ++calls;
        const double dev =
            max_abs_difference(live.params, in.live.params, in.live.config.editable());
        EXPECT_LE(dev, c.clamp_radius);
        EXPECT_EQ(dev, r.param_delta_inf_norm);
      });
      EXPECT_EQ(calls, out.steps_taken);
      EXPECT_LE(out.param_delta_inf_norm, c.clamp_radius);
    }
  }
}

TEST(IceEdit, UnclampedFineTuningLeavesTheBallAndLowersTheLoss) {
  auto in = make_instance(3);
  EditConfig c;
  c.variant = Variant::kFt;
  c.lr = 0.05;
  c.max_steps = 20;
  auto out = ice_edit(in.live, record_of(in), c);
  EXPECT_GT(out.param_delta_inf_norm, c.clamp_radius);
  EXPECT_LT(out.loss_trace.back().ft, out.loss_trace.front().ft);
  for (const auto& r : out.loss_trace) EXPECT_EQ(r.ice, 0.0);
}

TEST(IceEdit, OnlyEditableParametersMove) {
  auto in = make_instance(4);
  EditConfig c;
  c.lr = 0.05;
  c.max_steps = 5;
  c.sample_len = 2;
  auto out = ice_edit(in.live, record_of(in), c);
  const auto editable = in.live.config.editable();
  for (const auto& [name, t] : in.live.params) {
    const bool moves = std::find(editable.begin(), editable.end(), name) != editable.end();
    if (!moves) EXPECT_EQ(max_abs_difference(out.final_params, in.live.params, {name}), 0.0) << name;
  }
}

TEST(IceEdit, DeterministicForASeed) {
  auto in = make_instance(5);
  EditConfig c;
  c.sample_len = 2;
  c.seed = 17;
  c.lr = 0.01;
  auto a = ice_edit(in.live, record_of(in), c);
  auto b = ice_edit(in.live, record_of(in), c);
  EXPECT_TRUE(a.final_params.same_values(b.final_params));
  ASSERT_EQ(a.loss_trace.size(), b.loss_trace.size());
  for (std::size_t i = 0; i < a.loss_trace.size(); ++i)
    EXPECT_EQ(a.loss_trace[i].combined, b.loss_trace[i].combined);
}

TEST(IceEdit, CombinedIsFtPlusLambdaTimesCompletion) {
  auto in = make_instance(6);
  EditConfig c;
  c.lambda = 0.3;
  c.sample_len = 2;
  auto out = ice_edit(in.live, record_of(in), c);
  for (const auto& r : out.loss_trace) EXPECT_NEAR(r.combined, r.ft + 0.3 * r.ice, 1e-12);
}

TEST(IceEdit, ConvergesOnAFlatObjective) {
  auto in = make_instance(7);
  EditConfig c;
  c.variant = Variant::kFtClamped;
  c.lr = 1e-12;
  c.max_steps = 25;
  auto out = ice_edit(in.live, record_of(in), c);
  EXPECT_TRUE(out.converged);
  EXPECT_EQ(out.steps_taken, 1 + c.convergence_patience);
}

TEST(IceEdit, InputErrors) {
  auto in = make_instance(8);
  auto r = record_of(in);
  r.contexts.clear();
  EditConfig c;
  EXPECT_THROW(ice_edit(in.live, r, c), InputError);
  c.variant = Variant::kIceNoContext;
  EXPECT_NO_THROW(ice_edit(in.live, r, c));
  r.target.clear();
  EXPECT_THROW(ice_edit(in.live, r, c), InputError);
}

TEST(IceEdit, NonFiniteLossAborts) {
  auto in = make_instance(9);
  for (auto& [name, t] : in.live.params)
    for (auto& v : t.values()) v = std::numeric_limits<double>::quiet_NaN();
  EditConfig c;
  c.variant = Variant::kFt;
  EXPECT_THROW(ice_edit(in.live, record_of(in), c), NumericalError);
}

}  // namespace
}  // namespace icelab
