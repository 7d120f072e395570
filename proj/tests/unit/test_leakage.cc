#include <gtest/gtest.h>

#include <set>

#include "fllab/federation.h"
#include "fllab/leakage.h"
#include "fllab/metrics.h"
#include "test_util.h"

namespace fllab {
namespace {

TargetGradient target_of(const ModelSpec& spec, const ParamVector& p, const Example& ex,
                         AttackSurface surface = AttackSurface::kClientSgd) {
  return {surface, loss_and_param_grad(spec, p, std::span<const Example>(&ex, 1)).grad, 0, 0};
}

TargetGradient bias_only(const ModelSpec& spec, std::vector<double> bias) {
  GradVector g{ParamLayout(spec)};
  const std::size_t off = g.layout().head().bias_offset();
  for (std::size_t i = 0; i < bias.size(); ++i) g[off + i] = bias[i];
  return {AttackSurface::kClientSgd, g, 0, 0};
}

TEST(InferLabel, LinearSoftmaxSingleExample) {
  ModelSpec spec({2, 2}, {}, 5);
  Rng rng(1);
  ParamVector p = init_params(spec, rng);
  Example ex{testing::random_tensor({2, 2}, rng), 3};
  EXPECT_EQ(infer_label(target_of(spec, p, ex), spec), 3u);
}

TEST(InferLabel, SignRuleAndMagnitudeFallback) {
  ModelSpec spec({1}, {}, 3);
  EXPECT_EQ(infer_label(bias_only(spec, {-0.1, 0.9, 0.2}), spec), 0u);
  EXPECT_EQ(infer_label(bias_only(spec, {0.1, 0.9, 0.2}), spec), 1u);
  EXPECT_EQ(infer_label(bias_only(spec, {-0.5, -0.9, 0.2}), spec), 1u);
  EXPECT_EQ(infer_label(bias_only(spec, {0.4, -0.4, 0.4}), spec), 1u);
  EXPECT_EQ(infer_label(bias_only(spec, {0.4, 0.1, 0.4}), spec), 0u);
}

TEST(InferLabel, ExactOnAThousandRandomInstances) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    ModelSpec spec = testing::random_spec(rng);
    ParamVector p = init_params(spec, rng, 2.0);
    Example ex = testing::random_batch(spec, 1, rng).front();
    ASSERT_EQ(infer_label(target_of(spec, p, ex), spec), ex.label) << "instance " << i;
  }
}

TEST(InferLabel, BatchTakesMostNegativeEntries) {
  ModelSpec spec({1}, {}, 5);
  auto labels = infer_labels(bias_only(spec, {0.3, -0.2, 0.1, -0.6, 0.4}), spec, 2);
  EXPECT_EQ(std::set<std::size_t>(labels.begin(), labels.end()), (std::set<std::size_t>{1, 3}));
  auto topped = infer_labels(bias_only(spec, {0.3, -0.2, 0.1, 0.05, 0.4}), spec, 2);
  EXPECT_EQ(std::set<std::size_t>(topped.begin(), topped.end()), (std::set<std::size_t>{1, 4}));
}

TEST(InitSeed, PatternsAndDeterminism) {
  Rng a(3), b(3);
  EXPECT_EQ(init_seed(InitStrategy::kRandom, {6, 6}, nullptr, a),
            init_seed(InitStrategy::kRandom, {6, 6}, nullptr, b));

  Rng rng(4);
  Tensor bin = init_seed(InitStrategy::kBinary, {4, 4}, nullptr, rng);
  EXPECT_EQ(std::set<double>(bin.values().begin(), bin.values().end()), (std::set<double>{0, 1}));

  Tensor quad = init_seed(InitStrategy::kPatterned4, {8, 8}, nullptr, rng);
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t c = 0; c < 8; ++c) {
      EXPECT_EQ(quad[r * 8 + c], quad[(r / 4 * 4) * 8 + c / 4 * 4]);
    }
  }
  Tensor sixteen = init_seed(InitStrategy::kPatterned16, {8, 8}, nullptr, rng);
  std::set<double> distinct(sixteen.values().begin(), sixteen.values().end());
  EXPECT_EQ(distinct.size(), 16u);

  for (InitStrategy s : {InitStrategy::kRandom, InitStrategy::kPatterned4, InitStrategy::kPatterned16,
                         InitStrategy::kBinary, InitStrategy::kColor}) {
    const Tensor t = init_seed(s, {5, 5}, nullptr, rng);
    for (double v : t.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_THROW(init_seed(InitStrategy::kExemplar, {4, 4}, nullptr, rng), ConfigError);
  Tensor ex({4, 4}, 0.25);
  EXPECT_EQ(init_seed(InitStrategy::kExemplar, {4, 4}, &ex, rng), ex);
}

TEST(InitSeed, NamesRoundTrip) {
  for (InitStrategy s : {InitStrategy::kRandom, InitStrategy::kPatterned4, InitStrategy::kPatterned16,
                         InitStrategy::kBinary, InitStrategy::kColor, InitStrategy::kExemplar}) {
    EXPECT_EQ(parse_init_strategy(to_string(s)), s);
  }
  EXPECT_THROW(parse_init_strategy("checkerboard"), ConfigError);
}

TEST(Reconstruct, SelfMatchStopsImmediately) {
  ModelSpec spec({4, 4}, {{6, Activation::kSigmoid}}, 3);
  Rng rng(5);
  ParamVector p = init_params(spec, rng);
  Example ex{testing::random_tensor({4, 4}, rng), 2};
  AttackConfig cfg;
  cfg.init = InitStrategy::kExemplar;
  cfg.loss_threshold = 1e-12;
  ReconResult r = reconstruct(spec, p, target_of(spec, p, ex), cfg, &ex.x, &ex.x);
  EXPECT_EQ(r.iterations, 0u);
  ASSERT_TRUE(r.converged_at.has_value());
  EXPECT_EQ(*r.converged_at, 0u);
  EXPECT_LT(r.final_distance, 1e-12);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.x_rec(), ex.x);
}

TEST(Reconstruct, SingleLayerMatchesTheClosedForm) {
  ModelSpec spec({3, 3}, {}, 4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    ParamVector p = init_params(spec, rng);
    Example ex{testing::random_tensor({3, 3}, rng), seed % 4};
    TargetGradient t = target_of(spec, p, ex);
    const LayerSegment& head = t.grad.layout().head();
    const std::size_t r = ex.label;
    Tensor closed({3, 3});
    for (std::size_t j = 0; j < 9; ++j) {
      closed[j] = t.grad[head.weight_offset() + r * head.cols + j] / t.grad[head.bias_offset() + r];
    }
    EXPECT_LT(mse(closed, ex.x), 1e-20);

    AttackConfig cfg;
    cfg.optimizer = AttackOptimizer::kAdam;
    cfg.lr = 0.01;
    cfg.max_iters = 3000;
    cfg.loss_threshold = 1e-16;
    cfg.seed = seed;
    ReconResult rec = reconstruct(spec, p, t, cfg, &ex.x);
    EXPECT_LT(mse(rec.x_rec(), closed), 1e-6) << "seed " << seed;
  }
}

TEST(Reconstruct, TraceRecordsEveryStep) {
  ModelSpec spec({3, 3}, {{4, Activation::kTanh}}, 3);
  Rng rng(6);
  ParamVector p = init_params(spec, rng);
  Example ex{testing::random_tensor({3, 3}, rng), 1};
  AttackConfig cfg;
  cfg.max_iters = 25;
  ReconResult r = reconstruct(spec, p, target_of(spec, p, ex), cfg, &ex.x);
  EXPECT_EQ(r.iterations, 25u);
  EXPECT_EQ(r.trace.size(), 26u);
  EXPECT_EQ(r.trace.back(), r.final_distance);
  ASSERT_TRUE(r.mse.has_value());
  EXPECT_EQ(r.success, *r.mse < cfg.success_mse);
  for (double v : r.x_rec().values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Reconstruct, LayoutMismatchRejected) {
  ModelSpec spec({3, 3}, {}, 3), other({3, 3}, {}, 4);
  Rng rng(7);
  ParamVector p = init_params(spec, rng);
  TargetGradient t{AttackSurface::kClientSgd, GradVector{ParamLayout(other)}, 0, 0};
  EXPECT_THROW(reconstruct(spec, p, t, AttackConfig{}), InputError);
}

TEST(Reconstruct, AttackSurfacesAgreeForOneStepOfOne) {
  ModelSpec spec({4, 4}, {{6, Activation::kSigmoid}}, 3);
  Rng rng(8);
  ParamVector p = init_params(spec, rng);
  Example ex{testing::random_tensor({4, 4}, rng), 0};
  Dataset shard;
  shard.classes = 3;
  shard.images = {ex.x};
  shard.labels = {ex.label};
  Rng local(9);
  ClientUpdate u = local_train(spec, p, shard, 0, LocalTrainOptions{1, 1, 0.1, PayloadKind::kGradient}, local);
  TargetGradient server{AttackSurface::kServerAggregation, std::get<GradientPayload>(u.payload).grad, 0, 0};
  TargetGradient client = target_of(spec, p, ex);
  EXPECT_EQ(server.grad, client.grad);
  AttackConfig cfg;
  cfg.max_iters = 50;
  ReconResult a = reconstruct(spec, p, server, cfg, &ex.x);
  ReconResult b = reconstruct(spec, p, client, cfg, &ex.x);
  EXPECT_EQ(a.x_rec(), b.x_rec());
  EXPECT_EQ(a.trace, b.trace);
}

TEST(Reconstruct, InvalidConfigRejected) {
  AttackConfig c;
  c.max_iters = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AttackConfig{};
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AttackConfig{};
  c.batch = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EvaluateLeakage, IdentityExtremesAndHandPair) {
  Tensor x({2, 2}, {0.1, 0.9, 0.4, 0.25});
  LeakageScore same = evaluate_leakage(x, x);
  EXPECT_EQ(same.mse, 0.0);
  EXPECT_EQ(same.ssim, 1.0);
  EXPECT_TRUE(same.success);
  LeakageScore worst = evaluate_leakage(Tensor({2, 2}, 1.0), Tensor({2, 2}, 0.0));
  EXPECT_EQ(worst.mse, 1.0);
  EXPECT_FALSE(worst.success);
  Tensor y({2, 2}, {0.3, 0.5, 0.4, 1.0});
  EXPECT_DOUBLE_EQ(evaluate_leakage(x, y).mse, (0.04 + 0.16 + 0.0 + 0.5625) / 4.0);
  EXPECT_THROW(evaluate_leakage(x, Tensor({4}, 0.0)), InputError);
}

}  // namespace
}  // namespace fllab
