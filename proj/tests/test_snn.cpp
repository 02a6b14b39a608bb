#include <gtest/gtest.h>

#include <algorithm>

#include "stp/snn.hpp"
#include "test_util.hpp"

using namespace stp;
using stp::testing::TinyNet;

namespace {

// One neuron, identity input weight, so u receives the raw current.
Network<double> scalar_net(double decay, double threshold) {
  Network<double> net;
  net.layers.push_back({Tensor<double>::matrix({{1.0}}), std::nullopt});
  net.readout.W = Tensor<double>::matrix({{1.0}});
  net.lif = {decay, threshold};
  return net;
}

Tensor<double> sequence(std::initializer_list<double> xs) {
  std::vector<double> v(xs);
  return Tensor<double>({1, v.size(), 1}, v);
}

std::vector<double> series(const std::vector<Tensor<double>>& per_step) {
  std::vector<double> out;
  for (const auto& t : per_step) out.push_back(t[0]);
  return out;
}

double max_diff(const GradientSet<double>& a, const GradientSet<double>& b) {
  const auto ta = a.tensors(), tb = b.tensors();
  double d = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) d = std::max(d, max_abs_diff(*ta[i], *tb[i]));
  return d;
}

}  // namespace

TEST(LifForward, ResetZeroesCarriedPotential) {
  const auto tr = lif_forward(sequence({0.6, 0.0, 0.3}), scalar_net(0.5, 0.5), Mode::TemporalOn);
  EXPECT_EQ(series(tr.u[0]), (std::vector<double>{0.6, 0.0, 0.3}));
  EXPECT_EQ(series(tr.s[0]), (std::vector<double>{1, 0, 0}));
}

TEST(LifForward, DecayCarriesPotentialWithoutSpike) {
  const auto tr = lif_forward(sequence({0.4, 0.2, 0.0}), scalar_net(0.5, 0.5), Mode::TemporalOn);
  EXPECT_EQ(series(tr.u[0]), (std::vector<double>{0.4, 0.4, 0.2}));
  EXPECT_EQ(series(tr.s[0]), (std::vector<double>{0, 0, 0}));
}

TEST(LifForward, SpikeAtExactThreshold) {
  const auto tr = lif_forward(sequence({0.5}), scalar_net(0.5, 0.5), Mode::TemporalOn);
  EXPECT_EQ(tr.s[0][0][0], 1.0);
}

TEST(LifForward, ZeroInputGivesSilence) {
  Rng64 r(4);
  auto tn = stp::testing::make_tiny(stp::testing::random_shape(r), r);
  tn.inputs.fill(0.0);
  const auto tr = lif_forward(tn.inputs, tn.net, Mode::TemporalOn);
  for (std::size_t l = 0; l < tr.u.size(); ++l)
    for (std::size_t t = 0; t < tr.steps; ++t) {
      for (double v : tr.u[l][t].values()) ASSERT_EQ(v, 0.0);
      for (double v : tr.s[l][t].values()) ASSERT_EQ(v, 0.0);
    }
  for (const auto& o : tr.o)
    for (double v : o.values()) ASSERT_EQ(v, 0.0);
}

TEST(LifForward, TemporalOffUsesInstantaneousCurrent) {
  const auto tr = lif_forward(sequence({0.6, 0.0, 0.3}), scalar_net(0.5, 0.5), Mode::TemporalOff);
  EXPECT_EQ(series(tr.u[0]), (std::vector<double>{0.6, 0.0, 0.3}));
  EXPECT_EQ(series(tr.s[0]), (std::vector<double>{1, 0, 0}));
  auto net = scalar_net(0.9, 0.5);
  const auto tr2 = lif_forward(sequence({0.4, 0.4}), net, Mode::TemporalOff);
  EXPECT_EQ(series(tr2.u[0]), (std::vector<double>{0.4, 0.4}));
}

TEST(LifForward, SpikesAreBinary) {
  Rng64 r(8);
  for (int k = 0; k < 20; ++k) {
    auto tn = stp::testing::make_tiny(stp::testing::random_shape(r), r);
    const auto tr = lif_forward(tn.inputs, tn.net, Mode::TemporalOn);
    for (const auto& layer : tr.s)
      for (const auto& s : layer)
        for (double v : s.values()) ASSERT_TRUE(v == 0.0 || v == 1.0);
  }
}

TEST(LifForward, ReadoutIntegratesWithDecay) {
  auto net = scalar_net(0.0, 0.5);
  net.readout.decay = 0.5;
  const auto tr = lif_forward(sequence({1.0, 0.0, 1.0}), net, Mode::TemporalOn);
  EXPECT_EQ(series(tr.o), (std::vector<double>{1.0, 0.5, 1.25}));
}

TEST(LifForward, ChannelMismatchThrows) {
  EXPECT_THROW(lif_forward(Tensor<double>({1, 3, 2}), scalar_net(0.5, 0.5), Mode::TemporalOn), ShapeError);
}

TEST(LifForward, RejectsBadParameters) {
  auto net = scalar_net(1.5, 0.5);
  EXPECT_THROW(lif_forward(sequence({0.1}), net, Mode::TemporalOn), ConfigError);
  net = scalar_net(0.5, 0.0);
  EXPECT_THROW(lif_forward(sequence({0.1}), net, Mode::TemporalOn), ConfigError);
}

TEST(LifForward, DeterministicTraces) {
  Rng64 r(10);
  auto tn = stp::testing::make_tiny(stp::testing::random_shape(r), r);
  const auto a = lif_forward(tn.inputs, tn.net, Mode::TemporalOn);
  const auto b = lif_forward(tn.inputs, tn.net, Mode::TemporalOn);
  for (std::size_t l = 0; l < a.u.size(); ++l)
    for (std::size_t t = 0; t < a.steps; ++t) ASSERT_EQ(a.u[l][t], b.u[l][t]);
}

TEST(Surrogate, HandValues) {
  EXPECT_DOUBLE_EQ(surrogate(0.0, SurrogateSpec::of(SurrogateKind::Sigmoid)), 1.0);
  EXPECT_DOUBLE_EQ(surrogate(0.0, SurrogateSpec::of(SurrogateKind::Triangle)), 1.0);
  EXPECT_DOUBLE_EQ(surrogate(1.5, SurrogateSpec::of(SurrogateKind::Triangle)), 0.0);
  EXPECT_DOUBLE_EQ(surrogate(0.6, SurrogateSpec::of(SurrogateKind::Rectangle)), 0.0);
  EXPECT_DOUBLE_EQ(surrogate(0.4, SurrogateSpec::of(SurrogateKind::Rectangle)), 1.0);
}

TEST(Surrogate, NonNegativePeakAtZero) {
  for (auto k : {SurrogateKind::Rectangle, SurrogateKind::Triangle, SurrogateKind::Sigmoid}) {
    const auto spec = SurrogateSpec::of(k);
    for (double x = -3; x <= 3; x += 0.01) {
      ASSERT_GE(surrogate(x, spec), 0.0);
      ASSERT_LE(surrogate(x, spec), surrogate(0.0, spec) + 1e-15);
    }
  }
  const auto mg = SurrogateSpec::of(SurrogateKind::MultiGaussian);
  for (double x = -3; x <= 3; x += 0.01) ASSERT_LE(surrogate(x, mg), surrogate(0.0, mg) + 1e-15);
}

TEST(Surrogate, PrimitiveDerivativeMatches) {
  for (auto k : {SurrogateKind::Sigmoid, SurrogateKind::Triangle}) {
    const auto spec = SurrogateSpec::of(k);
    for (double x = -2.03; x <= 2; x += 0.1) {
      const double h = 1e-6;
      const double fd = (surrogate_primitive(x + h, spec) - surrogate_primitive(x - h, spec)) / (2 * h);
      ASSERT_NEAR(fd, surrogate(x, spec), 1e-6) << x;
    }
  }
}

TEST(Surrogate, SteepSigmoidPrimitiveApproachesStep) {
  auto spec = SurrogateSpec::of(SurrogateKind::Sigmoid);
  spec.slope = 1e4;
  EXPECT_NEAR(surrogate_primitive(0.01, spec), 1.0, 1e-12);
  EXPECT_NEAR(surrogate_primitive(-0.01, spec), 0.0, 1e-12);
}

TEST(SmoothForward, RejectsKindsWithoutPrimitive) {
  auto net = scalar_net(0.5, 0.5);
  net.surrogate = SurrogateSpec::of(SurrogateKind::Rectangle);
  EXPECT_THROW(smooth_forward(sequence({0.1}), net, Mode::TemporalOn), ConfigError);
  net.surrogate = SurrogateSpec::of(SurrogateKind::MultiGaussian);
  EXPECT_THROW(smooth_forward(sequence({0.1}), net, Mode::TemporalOn), ConfigError);
}

TEST(SmoothForward, ZeroInputGivesZeroReadout) {
  // A triangle no wider than the threshold keeps the smooth spike at 0 for u = 0.
  auto net = scalar_net(0.5, 0.5);
  net.surrogate = SurrogateSpec::of(SurrogateKind::Triangle);
  net.surrogate.gamma = 0.5;
  const auto tr = smooth_forward(sequence({0.0, 0.0}), net, Mode::TemporalOn);
  for (const auto& o : tr.o) EXPECT_EQ(o[0], 0.0);
}

TEST(SoftmaxXent, UniformLogits) {
  const std::vector<int> y{3};
  EXPECT_NEAR(softmax_xent(Tensor<double>({1, 10}), y).loss, std::log(10.0), 1e-15);
}

TEST(SoftmaxXent, HandValue) {
  const std::vector<int> y{0};
  EXPECT_NEAR(softmax_xent(Tensor<double>::matrix({{1.0, 0.0}}), y).loss, 0.31326168751822286, 1e-15);
}

TEST(SoftmaxXent, LargeMarginLossVanishes) {
  const std::vector<int> y{1};
  double prev = 1e9;
  for (double m : {1.0, 5.0, 10.0, 20.0}) {
    const double l = softmax_xent(Tensor<double>::matrix({{0.0, m}}), y).loss;
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-8);
  EXPECT_EQ(softmax_xent(Tensor<double>::matrix({{0.0, 1000.0}}), y).loss, 0.0);
}

TEST(SoftmaxXent, LabelOutOfRangeThrows) {
  const std::vector<int> y{2};
  EXPECT_THROW(softmax_xent(Tensor<double>({1, 2}), y), Error);
}

TEST(Backward, StbpMatchesFiniteDifferences) {
  Rng64 r(101);
  for (int k = 0; k < 10; ++k) {
    auto tn = stp::testing::make_tiny(stp::testing::random_shape(r), r);
    EXPECT_LE(stp::testing::fd_max_rel_error(tn, Algorithm::STBP), 1e-4);
  }
}

TEST(Backward, StbpMatchesFiniteDifferencesTwoLayersEightNeuronsFiveSteps) {
  Rng64 r(5);
  stp::testing::TinyShape s{2, 5, 3, 3, {8, 8}, true, 0.8, 1.0};
  const auto tn = stp::testing::make_tiny(s, r);
  EXPECT_LE(stp::testing::fd_max_rel_error(tn, Algorithm::STBP), 1e-4);
}

TEST(Backward, StbpTriangleSmoothMatchesFiniteDifferences) {
  Rng64 r(33);
  for (int k = 0; k < 5; ++k) {
    auto tn = stp::testing::make_tiny(stp::testing::random_shape(r), r, SurrogateSpec::of(SurrogateKind::Triangle));
    EXPECT_LE(stp::testing::fd_max_rel_error(tn, Algorithm::STBP), 1e-4);
  }
}

TEST(Backward, NotdMatchesFiniteDifferencesOfPerStepLoss) {
  Rng64 r(202);
  for (int k = 0; k < 10; ++k) {
    auto tn = stp::testing::make_tiny(stp::testing::random_shape(r), r);
    for (auto& l : tn.net.layers) l.V.reset();
    EXPECT_LE(stp::testing::fd_max_rel_error(tn, Algorithm::NoTD), 1e-4);
  }
}

TEST(Backward, SingleStepStbpEqualsSdbp) {
  Rng64 r(303);
  for (int k = 0; k < 20; ++k) {
    auto shape = stp::testing::random_shape(r);
    shape.steps = 1;
    const auto tn = stp::testing::make_tiny(shape, r);
    const auto tr = lif_forward(tn.inputs, tn.net, Mode::TemporalOn);
    const auto g = batch_loss(tr, tn.labels, Algorithm::STBP).second;
    const auto a = backward_stbp(tn.net, tr, g), b = backward_sdbp(tn.net, tr, g);
    EXPECT_EQ(max_diff(a, b), 0.0);
  }
}

TEST(Backward, SdbpEqualsNotdWithoutMemory) {
  Rng64 r(404);
  for (int k = 0; k < 20; ++k) {
    auto shape = stp::testing::random_shape(r);
    shape.decay = 0.0;
    shape.readout_decay = 0.0;
    shape.recurrent = false;
    const auto tn = stp::testing::make_tiny(shape, r);
    const auto on = lif_forward(tn.inputs, tn.net, Mode::TemporalOn);
    const auto off = lif_forward(tn.inputs, tn.net, Mode::TemporalOff);
    for (std::size_t t = 0; t < on.steps; ++t) ASSERT_LE(max_abs_diff(on.o[t], off.o[t]), 1e-12);
    const auto g = batch_loss(on, tn.labels, Algorithm::NoTD).second;
    EXPECT_LE(max_diff(backward_sdbp(tn.net, on, g), backward_notd(tn.net, off, g)), 1e-12);
  }
}

TEST(Backward, NoMemoryFeedforwardStbpEqualsSdbp) {
  Rng64 r(505);
  for (int k = 0; k < 20; ++k) {
    auto shape = stp::testing::random_shape(r);
    shape.decay = 0.0;
    shape.readout_decay = 0.0;
    shape.recurrent = false;
    const auto tn = stp::testing::make_tiny(shape, r);
    const auto tr = lif_forward(tn.inputs, tn.net, Mode::TemporalOn);
    const auto g = batch_loss(tr, tn.labels, Algorithm::NoTD).second;
    EXPECT_LE(max_diff(backward_stbp(tn.net, tr, g), backward_sdbp(tn.net, tr, g)), 1e-12);
  }
}

TEST(Backward, TemporalDifferenceMatchesLiteralSum) {
  Rng64 r(606);
  for (int k = 0; k < 30; ++k) {
    auto shape = stp::testing::random_shape(r);
    shape.hidden.resize(1);
    shape.recurrent = false;
    const auto tn = stp::testing::make_tiny(shape, r, SurrogateSpec::of(SurrogateKind::Triangle));
    const auto tr = lif_forward(tn.inputs, tn.net, Mode::TemporalOn);
    const auto g = batch_loss(tr, tn.labels, Algorithm::STBP).second;
    const auto a = backward_stbp(tn.net, tr, g), b = backward_sdbp(tn.net, tr, g);
    const auto lit = stp::testing::literal_single_layer(tn.net, tn.inputs, tn.labels);
    EXPECT_LE(max_abs_diff(b.dW[0], lit.dW_sdbp), 1e-10);
    Tensor<double> diff = a.dW[0];
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= b.dW[0][i];
    Tensor<double> lit_diff = lit.dW_stbp;
    for (std::size_t i = 0; i < lit_diff.size(); ++i) lit_diff[i] -= lit.dW_sdbp[i];
    EXPECT_LE(max_abs_diff(diff, lit_diff), 1e-10);
  }
}

TEST(Backward, SdbpIgnoresFutureInputs) {
  // Loss at step t never depends on inputs after t, so SDBP gradients of a
  // step-t loss are unchanged when later inputs change.
  Rng64 r(707);
  auto shape = stp::testing::random_shape(r);
  shape.steps = 4;
  auto tn = stp::testing::make_tiny(shape, r);
  auto grads_for = [&](const Tensor<double>& x) {
    const auto tr = lif_forward(x, tn.net, Mode::TemporalOn);
    ReadoutGrads<double> g(tr.steps);
    g[1] = softmax_xent(tr.o[1], tn.labels).grad;
    return backward_sdbp(tn.net, tr, g);
  };
  const auto base = grads_for(tn.inputs);
  auto x = tn.inputs;
  for (std::size_t b = 0; b < shape.batch; ++b)
    for (std::size_t c = 0; c < shape.inputs; ++c) x(b, 3, c) += 0.7;
  EXPECT_EQ(max_diff(base, grads_for(x)), 0.0);
}

TEST(Backward, NotdSumInvariantUnderTimePermutation) {
  Rng64 r(808);
  auto shape = stp::testing::random_shape(r);
  shape.steps = 4;
  shape.recurrent = false;
  const auto tn = stp::testing::make_tiny(shape, r);
  auto grads_for = [&](const Tensor<double>& x) {
    const auto tr = lif_forward(x, tn.net, Mode::TemporalOff);
    return backward_notd(tn.net, tr, batch_loss(tr, tn.labels, Algorithm::NoTD).second);
  };
  Tensor<double> rev = tn.inputs;
  for (std::size_t b = 0; b < shape.batch; ++b)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < shape.inputs; ++c) rev(b, t, c) = tn.inputs(b, 3 - t, c);
  EXPECT_LE(max_diff(grads_for(tn.inputs), grads_for(rev)), 1e-12);
}

TEST(Backward, SingleStepNotdEqualsSdbp) {
  Rng64 r(909);
  auto shape = stp::testing::random_shape(r);
  shape.steps = 1;
  shape.recurrent = false;
  const auto tn = stp::testing::make_tiny(shape, r);
  const auto tr = lif_forward(tn.inputs, tn.net, Mode::TemporalOn);
  const auto off = lif_forward(tn.inputs, tn.net, Mode::TemporalOff);
  const auto g = batch_loss(tr, tn.labels, Algorithm::STBP).second;
  EXPECT_EQ(max_diff(backward_sdbp(tn.net, tr, g), backward_notd(tn.net, off, g)), 0.0);
}

TEST(Backward, WrongTraceModeRejected) {
  Rng64 r(1);
  const auto tn = stp::testing::make_tiny(stp::testing::random_shape(r), r);
  const auto on = lif_forward(tn.inputs, tn.net, Mode::TemporalOn);
  const auto off = lif_forward(tn.inputs, tn.net, Mode::TemporalOff);
  const auto g = batch_loss(on, tn.labels, Algorithm::STBP).second;
  EXPECT_THROW(backward_stbp(tn.net, off, g), Error);
  EXPECT_THROW(backward_notd(tn.net, on, g), Error);
}

TEST(Backward, NotdLeavesRecurrentWeightsUntouched) {
  Rng64 r(2);
  auto shape = stp::testing::random_shape(r);
  shape.recurrent = true;
  const auto tn = stp::testing::make_tiny(shape, r);
  const auto off = lif_forward(tn.inputs, tn.net, Mode::TemporalOff);
  const auto gs = backward_notd(tn.net, off, batch_loss(off, tn.labels, Algorithm::NoTD).second);
  for (const auto& dv : gs.dV)
    for (double v : dv->values()) EXPECT_EQ(v, 0.0);
}
