#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "wmc/nn/gradcheck.hpp"
#include "wmc/nn/lstm.hpp"
#include "wmc/nn/ops.hpp"
#include "wmc/nn/params.hpp"

using namespace wmc;
using namespace wmc::nn;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

std::vector<int> random_labels(std::size_t n, int k, Rng& rng) {
  std::vector<int> out(n);
  for (auto& l : out) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
  return out;
}

}  // namespace

TEST(Dense, IdentityWeightsPassInputThrough) {
  Tensor<float> x({2, 3}, {1, -2, 3, 4, 5, -6});
  Tensor<float> W({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<float> b({3});
  EXPECT_EQ(dense_forward(x, W, &b), x);
}

TEST(Dense, HandComputedProduct) {
  Tensor<float> x({1, 2}, {1, 2});
  Tensor<float> W({2, 1}, {1, 1});
  Tensor<float> b({1}, {0.5f});
  const auto y = dense_forward(x, W, &b);
  ASSERT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_FLOAT_EQ(y[0], 3.5f);
}

TEST(Dense, ShapeMismatchThrows) {
  Tensor<float> x({1, 3});
  Tensor<float> W({4, 2});
  try {
    dense_forward(x, W);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape);
  }
}

TEST(Activations, ReluSigmoidSoftmax) {
  const auto r = relu(Tensor<float>({3}, {-1, 0, 2}));
  EXPECT_EQ(r.values(), (std::vector<float>{0, 0, 2}));
  EXPECT_FLOAT_EQ(sigmoid(Tensor<float>({1}, {0}))[0], 0.5f);
  const auto s = softmax(Tensor<float>({1, 4}));
  for (float v : s.values()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Activations, SoftmaxRowsOnSimplexForExtremeLogits) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<float> x({4, 7});
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-80, 80));
    const auto y = softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0;
      for (std::size_t k = 0; k < 7; ++k) {
        EXPECT_GE(y.at(r, k), 0.0f);
        EXPECT_LE(y.at(r, k), 1.0f);
        sum += y.at(r, k);
      }
      EXPECT_NEAR(sum, 1.0, 1e-5);
    }
  }
}

TEST(Dropout, RateZeroAndInferenceAreIdentity) {
  Rng rng(1);
  Tensor<float> x({2, 5}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  EXPECT_EQ(dropout(x, 0.0, Mode::train, rng), x);
  EXPECT_EQ(dropout(x, 0.7, Mode::infer, rng), x);
}

TEST(Dropout, InvertedScalingPreservesMean) {
  Rng rng(42);
  Tensor<float> x({100000}, 1.0f);
  const auto y = dropout(x, 0.5, Mode::train, rng);
  const double mean = std::accumulate(y.values().begin(), y.values().end(), 0.0) / static_cast<double>(y.size());
  // sd of the mean is 1/sqrt(1e5) ~ 0.0032
  EXPECT_NEAR(mean, 1.0, 0.015);
  for (float v : y.values()) EXPECT_TRUE(v == 0.0f || v == 2.0f);
}

TEST(Dropout, RateOutOfRangeThrows) {
  Rng rng(1);
  EXPECT_THROW(dropout(Tensor<float>({2}), 1.0, Mode::train, rng), Error);
  EXPECT_THROW(dropout(Tensor<float>({2}), -0.1, Mode::train, rng), Error);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Rng rng(5);
  Tensor<float> x({2, 1, 4, 5});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
  Tensor<float> k({1, 1, 1, 1}, 1.0f);
  Tensor<float> b({1});
  EXPECT_EQ(conv2d_forward(x, k, b, 1, 0), x);
}

TEST(Conv2d, AllOnesValidPaddingSumsWindow) {
  Tensor<float> x({1, 1, 3, 3}, 1.0f);
  Tensor<float> k({1, 1, 3, 3}, 1.0f);
  Tensor<float> b({1});
  const auto y = conv2d_forward(x, k, b, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_FLOAT_EQ(y[0], 9.0f);
}

TEST(Conv2d, ChannelMismatchThrows) {
  Tensor<float> x({1, 2, 3, 3});
  Tensor<float> k({1, 3, 3, 3});
  Tensor<float> b({1});
  EXPECT_THROW(conv2d_forward(x, k, b, 1, 0), Error);
}

TEST(MaxPool, PicksWindowMax) {
  Tensor<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto y = maxpool2d(x, 2, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_FLOAT_EQ(y[0], 4.0f);
  EXPECT_THROW(maxpool2d(x, 3, 1), Error);
}

TEST(Lstm, ZeroWeightsZeroState) {
  Tape<double> tape;
  ParameterSet<double> params;
  params.add("Wx", Tensor<double>({3, 8}));
  params.add("Wh", Tensor<double>({2, 8}));
  params.add("b", Tensor<double>({8}));
  LstmParams p{tape.param(params, "Wx"), tape.param(params, "Wh"), tape.param(params, "b")};
  Var x = tape.constant(Tensor<double>({1, 3}, {0.3, -1.0, 2.0}));
  Var h = tape.constant(Tensor<double>({1, 2}));
  Var c = tape.constant(Tensor<double>({1, 2}));
  auto [h1, c1] = lstm_cell_step(tape, x, h, c, p);
  for (double v : tape.value(c1).values()) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : tape.value(h1).values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Lstm, ZeroWeightsHalveCellState) {
  Tape<double> tape;
  ParameterSet<double> params;
  params.add("Wx", Tensor<double>({1, 4}));
  params.add("Wh", Tensor<double>({1, 4}));
  params.add("b", Tensor<double>({4}));
  LstmParams p{tape.param(params, "Wx"), tape.param(params, "Wh"), tape.param(params, "b")};
  const double c0 = 1.7;
  auto [h1, c1] = lstm_cell_step(tape, tape.constant(Tensor<double>({1, 1}, {5.0})),
                                 tape.constant(Tensor<double>({1, 1}, {-0.4})),
                                 tape.constant(Tensor<double>({1, 1}, {c0})), p);
  EXPECT_DOUBLE_EQ(tape.value(c1)[0], 0.5 * c0);
  EXPECT_DOUBLE_EQ(tape.value(h1)[0], 0.5 * std::tanh(0.5 * c0));
}

TEST(Lstm, StateWidthMismatchThrows) {
  Tape<double> tape;
  ParameterSet<double> params;
  for (const auto& s : lstm_param_specs("l", 3, 4)) params.add(s.name, Tensor<double>(s.shape));
  LstmParams p{tape.param(params, "l.Wx"), tape.param(params, "l.Wh"), tape.param(params, "l.b")};
  Var x = tape.constant(Tensor<double>({1, 3}));
  Var h = tape.constant(Tensor<double>({1, 5}));
  EXPECT_THROW(lstm_cell_step(tape, x, h, h, p), Error);
}

TEST(Loss, PerfectPredictionIsNearZero) {
  Tensor<float> probs({2, 3}, {1, 0, 0, 0, 0, 1});
  const std::vector<int> labels{0, 2};
  EXPECT_LE(sparse_categorical_cross_entropy(probs, labels), -std::log(1.0 - 1e-7) + 1e-12);
}

TEST(Loss, UniformFourClassIsLn4) {
  Tensor<float> probs({3, 4}, 0.25f);
  const std::vector<int> labels{0, 3, 1};
  EXPECT_NEAR(sparse_categorical_cross_entropy(probs, labels), std::log(4.0), 1e-6);
}

TEST(Loss, LabelOutOfRangeThrows) {
  Tensor<float> probs({1, 4}, 0.25f);
  const std::vector<int> labels{5};
  EXPECT_THROW(sparse_categorical_cross_entropy(probs, labels), Error);
}

TEST(Loss, BinaryCrossEntropyKnownValue) {
  Tensor<float> p({2, 1}, {0.8f, 0.25f});
  const std::vector<int> labels{1, 0};
  EXPECT_NEAR(binary_cross_entropy(p, labels), -(std::log(0.8) + std::log(0.75)) / 2, 1e-6);
}

TEST(Loss, TrueDistributionMinimisesCrossEntropy) {
  Rng rng(11);
  const std::vector<int> labels{2, 0, 1};
  Tensor<double> truth({3, 3}, {0, 0, 1, 1, 0, 0, 0, 1, 0});
  const double best = sparse_categorical_cross_entropy(truth, labels);
  for (int trial = 0; trial < 500; ++trial) {
    Tensor<double> p({3, 3});
    for (auto& v : p.values()) v = rng.uniform() + 1e-3;
    for (std::size_t r = 0; r < 3; ++r) {
      double s = p.at(r, 0) + p.at(r, 1) + p.at(r, 2);
      for (std::size_t k = 0; k < 3; ++k) p.at(r, k) /= s;
    }
    EXPECT_GE(sparse_categorical_cross_entropy(p, labels), best);
  }
}

TEST(Backward, SumOfProductGivesInputOuterStructure) {
  // L = sum(x W) with x [1,2] fixed  =>  dL/dW[i][j] = x[i]
  Tape<double> tape;
  ParameterSet<double> params;
  params.add("W", Tensor<double>({2, 3}, {0.1, 0.2, 0.3, -0.4, 0.5, 0.6}));
  Var x = tape.constant(Tensor<double>({1, 2}, {2.0, -3.0}));
  Var loss = ops::sum(tape, ops::dense(tape, x, tape.param(params, "W")));
  tape.backward(loss);
  const auto& g = params.at("W").grad;
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(g.at(0, j), 2.0);
    EXPECT_DOUBLE_EQ(g.at(1, j), -3.0);
  }
}

TEST(Backward, UnusedParameterHasZeroGradient) {
  Tape<double> tape;
  ParameterSet<double> params;
  params.add("used", Tensor<double>({1, 1}, {2.0}));
  params.add("unused", Tensor<double>({1, 1}, {5.0}));
  Var x = tape.constant(Tensor<double>({1, 1}, {3.0}));
  tape.param(params, "unused");
  tape.backward(ops::sum(tape, ops::dense(tape, x, tape.param(params, "used"))));
  EXPECT_DOUBLE_EQ(params.at("used").grad[0], 3.0);
  EXPECT_DOUBLE_EQ(params.at("unused").grad[0], 0.0);
}

TEST(Backward, BeforeForwardThrows) {
  Tape<float> tape;
  try {
    tape.backward(Var{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::state);
  }
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  auto params = init_parameters<float>({{"w", {3, 4}}, {"b", {4}, InitKind::zeros}}, 9);
  const auto before = params;
  AdamConfig cfg;
  for (int i = 0; i < 5; ++i) adam_update(params, cfg);
  EXPECT_TRUE(params.same_values(before));
  EXPECT_EQ(cfg.step, 5u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet<float> params;
  params.add("w", Tensor<float>({1}, {0.5f}));
  params.at("w").grad[0] = 1.0f;
  AdamConfig cfg;
  adam_update(params, cfg);
  // mhat = vhat = 1  =>  delta = -lr / (1 + eps)
  EXPECT_NEAR(params.at("w").value[0], 0.5f - 0.001f / (1.0f + 1e-8f), 1e-7);
}

TEST(Adam, IdenticalInputsGiveIdenticalUpdates) {
  auto a = init_parameters<float>({{"w", {5, 5}}}, 1);
  auto b = a;
  for (std::size_t i = 0; i < 25; ++i) a.at("w").grad[i] = b.at("w").grad[i] = static_cast<float>(i) * 0.1f - 1.0f;
  AdamConfig ca, cb;
  adam_update(a, ca);
  adam_update(b, cb);
  EXPECT_TRUE(a.same_values(b));
}

TEST(Adam, EmptyParameterSetThrows) {
  ParameterSet<float> params;
  AdamConfig cfg;
  EXPECT_THROW(adam_update(params, cfg), Error);
}

TEST(Init, DeterministicGlorotBoundsAndBiases) {
  const std::vector<ParamSpec> specs{{"fc.W", {512, 512}},
                                     {"fc.b", {512}, InitKind::zeros},
                                     {"lstm.b", {16}, InitKind::lstm_bias},
                                     {"conv.K", {16, 3, 3, 3}}};
  const auto a = init_parameters<float>(specs, 77);
  const auto b = init_parameters<float>(specs, 77);
  EXPECT_TRUE(a.same_values(b));
  const double bound = std::sqrt(6.0 / 1024.0);
  EXPECT_NEAR(bound, 0.0765, 1e-4);
  for (float w : a.at("fc.W").value.values()) EXPECT_LE(std::abs(w), bound);
  for (float v : a.at("fc.b").value.values()) EXPECT_EQ(v, 0.0f);
  const auto& lb = a.at("lstm.b").value;
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(lb[i], (i >= 4 && i < 8) ? 1.0f : 0.0f);
  const double conv_bound = std::sqrt(6.0 / (27.0 + 144.0));
  for (float w : a.at("conv.K").value.values()) EXPECT_LE(std::abs(w), conv_bound);
}

// ----------------------------------------------------------------------------
// Finite-difference checks per layer type.

TEST(GradCheck, DenseReluSoftmaxCrossEntropy) {
  Rng rng(1);
  ParameterSet<double> params;
  params.add("W1", random_tensor({6, 8}, rng));
  params.add("b1", random_tensor({8}, rng, 0.1));
  params.add("W2", random_tensor({8, 4}, rng));
  params.add("b2", random_tensor({4}, rng, 0.1));
  const auto x = random_tensor({5, 6}, rng);
  const auto labels = random_labels(5, 4, rng);
  auto loss = [&](Tape<double>& t, ParameterSet<double>& p) {
    Var h = ops::relu(t, ops::dense(t, t.constant(x), t.param(p, "W1"), t.param(p, "b1")));
    Var probs = ops::softmax(t, ops::dense(t, h, t.param(p, "W2"), t.param(p, "b2")));
    return ops::sparse_categorical_cross_entropy(t, probs, labels);
  };
  EXPECT_LE(grad_check(loss, params, 1e-5, 64).max_relative_error, 1e-4);
}

TEST(GradCheck, LstmCellOneStep) {
  Rng rng(2);
  ParameterSet<double> params;
  for (const auto& s : lstm_param_specs("l", 5, 6)) params.add(s.name, random_tensor(s.shape, rng, 0.7));
  params.add("h0", random_tensor({3, 6}, rng));
  params.add("c0", random_tensor({3, 6}, rng));
  const auto x = random_tensor({3, 5}, rng);
  const auto w = random_tensor({3, 6}, rng);
  auto loss = [&](Tape<double>& t, ParameterSet<double>& p) {
    LstmParams lp{t.param(p, "l.Wx"), t.param(p, "l.Wh"), t.param(p, "l.b")};
    auto [h, c] = lstm_cell_step(t, t.constant(x), t.param(p, "h0"), t.param(p, "c0"), lp);
    return ops::add(t, ops::weighted_sum(t, h, w), ops::weighted_sum(t, c, w));
  };
  EXPECT_LE(grad_check(loss, params, 1e-5, 64).max_relative_error, 1e-4);
}

TEST(GradCheck, ConvMaxPoolPath) {
  Rng rng(3);
  ParameterSet<double> params;
  params.add("x", random_tensor({2, 2, 6, 6}, rng));
  params.add("K", random_tensor({3, 2, 3, 3}, rng));
  params.add("b", random_tensor({3}, rng, 0.1));
  const auto w = random_tensor({2, 3 * 3 * 3}, rng);
  auto loss = [&](Tape<double>& t, ParameterSet<double>& p) {
    Var y = ops::conv2d(t, t.param(p, "x"), t.param(p, "K"), t.param(p, "b"), 1, 1);
    Var pooled = ops::maxpool2d(t, ops::relu(t, y), 2, 2);
    return ops::weighted_sum(t, ops::flatten(t, pooled), w);
  };
  EXPECT_LE(grad_check(loss, params, 1e-5, 48).max_relative_error, 1e-4);
}

TEST(GradCheck, SigmoidBinaryCrossEntropy) {
  Rng rng(4);
  ParameterSet<double> params;
  params.add("W", random_tensor({7, 1}, rng));
  params.add("b", random_tensor({1}, rng, 0.1));
  const auto x = random_tensor({9, 7}, rng);
  const auto labels = random_labels(9, 2, rng);
  auto loss = [&](Tape<double>& t, ParameterSet<double>& p) {
    Var prob = ops::sigmoid(t, ops::dense(t, t.constant(x), t.param(p, "W"), t.param(p, "b")));
    return ops::binary_cross_entropy(t, prob, labels);
  };
  EXPECT_LE(grad_check(loss, params).max_relative_error, 1e-4);
}

TEST(GradCheck, CorruptedBackwardRuleIsCaught) {
  Rng rng(5);
  ParameterSet<double> params;
  params.add("W", random_tensor({4, 3}, rng));
  const auto x = random_tensor({2, 4}, rng);
  const auto w = random_tensor({2, 3}, rng);
  // dense whose weight gradient is doubled
  auto bad_dense = [](Tape<double>& t, Var xv, Var W) {
    return t.push(dense_forward(t.value(xv), t.value(W)), true, [xv, W](Tape<double>& tp, Var self) {
      const auto& dy = tp.grad(self);
      const auto& xval = tp.value(xv);
      auto& gW = tp.grad(W);
      gemm::tn(xval.dim(1), xval.dim(0), dy.dim(1), xval.data(), dy.data(), gW.data(), true);
      for (auto& g : gW.values()) g *= 2.0;
    });
  };
  auto loss = [&](Tape<double>& t, ParameterSet<double>& p) {
    return ops::weighted_sum(t, bad_dense(t, t.constant(x), t.param(p, "W")), w);
  };
  EXPECT_GT(grad_check(loss, params).max_relative_error, 1e-2);
}
