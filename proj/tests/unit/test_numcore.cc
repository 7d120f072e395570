#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fllab/errors.h"
#include "fllab/model.h"
#include "test_util.h"

namespace fllab {
namespace {

using testing::rel_error;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Straight-line forward pass for a one-hidden-layer sigmoid MLP.
std::vector<double> reference_forward(const ParamVector& p, std::size_t in, std::size_t hid,
                                      std::size_t out, const Tensor& x) {
  std::vector<double> h(hid), z(out);
  std::size_t k = 0;
  for (std::size_t r = 0; r < hid; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < in; ++c) acc += p[k + r * in + c] * x[c];
    h[r] = acc;
  }
  k += hid * in;
  for (std::size_t r = 0; r < hid; ++r) h[r] = sigmoid(h[r] + p[k + r]);
  k += hid;
  for (std::size_t r = 0; r < out; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < hid; ++c) acc += p[k + r * hid + c] * h[c];
    z[r] = acc;
  }
  k += out * hid;
  for (std::size_t r = 0; r < out; ++r) z[r] += p[k + r];
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) sum += (v = std::exp(v - m));
  for (double& v : z) v /= sum;
  return z;
}

TEST(Tensor, RejectsMismatchedValues) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), InputError);
  EXPECT_THROW(Tensor({2, 0}), InputError);
}

TEST(ParamLayout, SegmentsCoverTheVector) {
  ModelSpec spec({3, 3}, {{5, Activation::kSigmoid}, {4, Activation::kTanh}}, 3);
  ParamLayout layout(spec);
  std::size_t sum = 0;
  for (const auto& s : layout.segments()) {
    EXPECT_EQ(s.offset, sum);
    sum += s.extent();
  }
  EXPECT_EQ(sum, layout.total());
  EXPECT_EQ(layout.total(), 9 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3);
  EXPECT_EQ(layout.head().rows, 3u);
}

TEST(Forward, ZeroParamsGiveUniformProbabilities) {
  ModelSpec spec({2, 2}, {{3, Activation::kSigmoid}}, 4);
  ParamVector p{ParamLayout(spec)};
  Rng rng(1);
  Tensor probs = forward(spec, p, testing::random_tensor({2, 2}, rng));
  for (double v : probs.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Forward, HugeDiagonalSaturates) {
  ModelSpec spec({4}, {}, 4);
  ParamVector p{ParamLayout(spec)};
  for (std::size_t i = 0; i < 4; ++i) p[i * 4 + i] = 50.0;
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor x({4});
    x[i] = 1.0;
    EXPECT_GT(forward(spec, p, x)[i], 0.99);
  }
}

TEST(Forward, MatchesStraightLineReimplementation) {
  Rng rng(2);
  ModelSpec spec({3, 3}, {{6, Activation::kSigmoid}}, 4);
  for (int trial = 0; trial < 20; ++trial) {
    ParamVector p = init_params(spec, rng, 2.0);
    Tensor x = testing::random_tensor({3, 3}, rng);
    Tensor probs = forward(spec, p, x);
    std::vector<double> ref = reference_forward(p, 9, 6, 4, x);
    double sum = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(probs[i], ref[i], 1e-12);
      sum += probs[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Forward, RejectsShapeMismatch) {
  ModelSpec spec({2, 2}, {}, 3);
  ParamVector p{ParamLayout(spec)};
  EXPECT_THROW(forward(spec, p, Tensor({3})), InputError);
}

TEST(LossAndGrad, EmptyBatchIsDegenerate) {
  ModelSpec spec({2}, {}, 2);
  ParamVector p{ParamLayout(spec)};
  EXPECT_THROW(loss_and_param_grad(spec, p, {}), DegenerateInputError);
}

TEST(LossAndGrad, LinearBiasGradientIsProbsMinusOneHot) {
  Rng rng(3);
  ModelSpec spec({5}, {}, 4);
  ParamVector p = init_params(spec, rng);
  Example ex{testing::random_tensor({5}, rng), 2};
  auto lg = loss_and_param_grad(spec, p, std::span<const Example>(&ex, 1));
  Tensor probs = forward(spec, p, ex.x);
  auto bias = lg.grad.bias(0);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(bias[c], probs[c] - (c == 2 ? 1.0 : 0.0), 1e-12);
  }
}

TEST(LossAndGrad, StationaryPointHasTinyGradient) {
  // A bias that saturates towards the label leaves probs - onehot ~ e^-40.
  ModelSpec spec({2}, {}, 2);
  ParamVector p{ParamLayout(spec)};
  p[p.size() - 2] = 40.0;
  Example ex{Tensor({2}, std::vector<double>{0.3, 0.7}), 0};
  auto lg = loss_and_param_grad(spec, p, std::span<const Example>(&ex, 1));
  EXPECT_LT(l2_norm(lg.grad.values()), 1e-8);
}

TEST(LossAndGrad, MatchesFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    ModelSpec spec = testing::random_spec(rng);
    ParamVector p = init_params(spec, rng, 1.5);
    auto batch = testing::random_batch(spec, 3, rng);
    auto lg = loss_and_param_grad(spec, p, batch);
    for (std::size_t i = 0; i < p.size(); ++i) {
      ParamVector plus = p, minus = p;
      plus[i] += 1e-5;
      minus[i] -= 1e-5;
      const double fd = (loss_and_param_grad(spec, plus, batch).loss -
                         loss_and_param_grad(spec, minus, batch).loss) / 2e-5;
      ASSERT_LT(rel_error(lg.grad[i], fd), 1e-5) << "trial " << trial << " coord " << i;
    }
  }
}

TEST(PerExampleGrads, SingletonEqualsBatchGradient) {
  Rng rng(5);
  ModelSpec spec({3, 3}, {{4, Activation::kTanh}}, 3);
  ParamVector p = init_params(spec, rng);
  auto batch = testing::random_batch(spec, 1, rng);
  EXPECT_EQ(per_example_grads(spec, p, batch).front(), loss_and_param_grad(spec, p, batch).grad);
}

TEST(PerExampleGrads, DuplicatesAreIdentical) {
  Rng rng(6);
  ModelSpec spec({3, 3}, {{4, Activation::kSigmoid}}, 3);
  ParamVector p = init_params(spec, rng);
  auto one = testing::random_batch(spec, 1, rng);
  std::vector<Example> twice = {one[0], one[0]};
  auto g = per_example_grads(spec, p, twice);
  EXPECT_EQ(g[0], g[1]);
}

TEST(PerExampleGrads, MeanEqualsBatchGradient) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    ModelSpec spec = testing::random_spec(rng);
    ParamVector p = init_params(spec, rng);
    auto batch = testing::random_batch(spec, 4, rng);
    auto per = per_example_grads(spec, p, batch);
    auto whole = loss_and_param_grad(spec, p, batch).grad;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double mean = 0.0;
      for (const auto& g : per) mean += g[i] / 4.0;
      EXPECT_NEAR(mean, whole[i], 1e-10);
    }
  }
}

TEST(GradMatch, SelfMatchIsAFixedPoint) {
  Rng rng(8);
  ModelSpec spec({3, 3}, {{5, Activation::kSigmoid}}, 4);
  ParamVector p = init_params(spec, rng);
  auto batch = testing::random_batch(spec, 1, rng);
  auto target = loss_and_param_grad(spec, p, batch).grad;
  auto gm = grad_match_input_grad(spec, p, batch[0].x, batch[0].label, target);
  EXPECT_EQ(gm.distance, 0.0);
  EXPECT_LT(l2_norm(gm.dx[0].values()), 1e-8);
}

TEST(GradMatch, SingleAffineLayerClosedForm) {
  // Linear softmax: grad W = (p - e_y) x^T, grad b = p - e_y. With
  // r_W, r_b the residuals, D = |r_W|^2 + |r_b|^2 and
  // dD/dx = 2 sum_k [ r_W[k]^T ((p - e_y)_k) ] + 2 J_p^T (r_W x + r_b),
  // where J_p = (diag(p) - p p^T) W.
  Rng rng(9);
  const std::size_t n = 4, k = 3;
  ModelSpec spec({n}, {}, k);
  ParamVector p = init_params(spec, rng, 2.0);
  Tensor x = testing::random_tensor({n}, rng);
  const std::size_t y = 1;
  GradVector target{ParamLayout(spec)};
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);

  auto gm = grad_match_input_grad(spec, p, x, y, target);

  Tensor probs = forward(spec, p, x);
  std::vector<double> e(k), rw(k * n), rb(k), s(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) e[c] = probs[c] - (c == y ? 1.0 : 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < n; ++j) rw[c * n + j] = e[c] * x[j] - target[c * n + j];
    rb[c] = e[c] - target[k * n + c];
  }
  // s_c = dD/de_c / 2 = sum_j rw[c,j] x_j + rb[c]
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < n; ++j) s[c] += rw[c * n + j] * x[j];
    s[c] += rb[c];
  }
  // de/dz = diag(p) - p p^T; dz/dx = W
  std::vector<double> u(k, 0.0);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      const double jac = (a == b ? probs[a] : 0.0) - probs[a] * probs[b];
      u[b] += s[a] * jac;
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    double expected = 0.0;
    for (std::size_t c = 0; c < k; ++c) expected += 2.0 * rw[c * n + j] * e[c] + 2.0 * u[c] * p[c * n + j];
    EXPECT_NEAR(gm.dx[0][j], expected, 1e-9);
  }
}

TEST(GradMatch, MatchesFiniteDifferencesOfDistance) {
  Rng rng(10);
  for (int trial = 0; trial < 15; ++trial) {
    ModelSpec spec = testing::random_spec(rng, 6);
    ParamVector p = init_params(spec, rng, 1.5);
    auto truth = testing::random_batch(spec, 1, rng);
    auto target = loss_and_param_grad(spec, p, truth).grad;
    Tensor x = testing::random_tensor(spec.input_shape(), rng);
    auto gm = grad_match_input_grad(spec, p, x, truth[0].label, target);
    for (std::size_t i = 0; i < x.size(); ++i) {
      Tensor plus = x, minus = x;
      plus[i] += 1e-5;
      minus[i] -= 1e-5;
      const double fd = (grad_match_input_grad(spec, p, plus, truth[0].label, target).distance -
                         grad_match_input_grad(spec, p, minus, truth[0].label, target).distance) /
                        2e-5;
      ASSERT_LT(rel_error(gm.dx[0][i], fd), 1e-4) << "trial " << trial << " pixel " << i;
    }
  }
}

TEST(GradMatch, RejectsLayoutMismatch) {
  ModelSpec spec({2}, {}, 2), other({3}, {}, 2);
  ParamVector p{ParamLayout(spec)};
  GradVector g{ParamLayout(other)};
  EXPECT_THROW(grad_match_input_grad(spec, p, Tensor({2}), 0, g), InputError);
}

TEST(Determinism, IdenticalInputsGiveIdenticalOutputs) {
  Rng a(11), b(11);
  ModelSpec spec({3, 3}, {{4, Activation::kSigmoid}}, 3);
  ParamVector pa = init_params(spec, a), pb = init_params(spec, b);
  EXPECT_EQ(pa, pb);
  auto batch = testing::random_batch(spec, 2, a);
  EXPECT_EQ(loss_and_param_grad(spec, pa, batch).grad, loss_and_param_grad(spec, pb, batch).grad);
}

}  // namespace
}  // namespace fllab
