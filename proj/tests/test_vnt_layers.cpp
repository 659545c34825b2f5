#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace vnt;
using namespace vnt::testing;

namespace {

VectorFeatureSet set_of(std::size_t c, std::size_t n, std::vector<double> v) {
  return VectorFeatureSet(Tensor::from({c, n, 3}, std::move(v)));
}

RowStochasticWeights weights_from(std::size_t rows, std::size_t cols, std::vector<double> u) {
  return RowStochasticWeights::from_free(Tensor::from({rows, cols}, std::move(u)));
}

double residual(const VectorFeatureSet& a, const VectorFeatureSet& b) {
  return max_abs_diff(a.tensor().data(), b.tensor().data());
}

Vec3 vec(const Tensor& w, std::size_t row, const VectorFeatureSet& v, std::size_t n) {
  Vec3 out = Vec3::Zero();
  for (std::size_t j = 0; j < v.channels(); ++j) out += w.at({row, j}) * v.vector(j, n);
  return out;
}

/// Per-channel argmax by direct enumeration of every point's score.
std::vector<std::size_t> brute_maxpool(const VectorFeatureSet& v, const RowStochasticWeights& k,
                                       const RowStochasticWeights& o) {
  const Tensor kw = k.effective(), ow = o.effective();
  std::vector<std::size_t> arg(v.channels());
  for (std::size_t c = 0; c < v.channels(); ++c) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < v.points(); ++n) {
      const Vec3 origin = vec(ow, c, v, n);
      const Vec3 a = v.vector(c, n) - origin, b = vec(kw, c, v, n) - origin;
      const double s = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
      if (s > best) {
        best = s;
        arg[c] = n;
      }
    }
  }
  return arg;
}

}  // namespace

TEST(RowStochastic, EffectiveRowsSumToOne) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    RowStochasticWeights w(1 + rng.index(5), 1 + rng.index(5), rng);
    for (double& x : w.free().mutable_data()) x += 10.0 * rng.normal();
    const Tensor e = w.effective();
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) s += e.at({i, j});
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(RowStochastic, ReparameterizationGradientMatchesFiniteDifferences) {
  Rng rng(2);
  RowStochasticWeights w(3, 4, rng);
  Tensor u = w.free();
  EXPECT_LT(gradient_error([&] { return probe(w.effective()); }, {u}), 1e-7);
}

TEST(VntLinear, SingleChannelIdentity) {
  const auto out = vnt_linear(set_of(1, 1, {1, 2, 3}), weights_from(1, 1, {1.0}));
  EXPECT_EQ(out.vector(0, 0), Vec3(1, 2, 3));
}

TEST(VntLinear, RowAverage) {
  const auto out = vnt_linear(set_of(2, 1, {0, 0, 0, 2, 4, 6}), weights_from(1, 2, {0.5, 0.5}));
  EXPECT_EQ(out.vector(0, 0), Vec3(1, 2, 3));
}

TEST(VntLinear, RigidMotionCommutes) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    RowStochasticWeights w(2, 3, rng);
    const auto v = random_feature_set(3, 1, rng);
    const RigidTransform g = sample_rigid(rng, 10.0);
    const auto lhs = vnt_linear(transform_features(v, g.rotation, g.translation), w);
    const auto rhs = transform_features(vnt_linear(v, w), g.rotation, g.translation);
    EXPECT_LT(residual(lhs, rhs), 1e-12);
  }
}

TEST(VntLinear, ChannelMismatchIsDimensionError) {
  Rng rng(4);
  RowStochasticWeights w(2, 3, rng);
  EXPECT_THROW(vnt_linear(random_feature_set(2, 4, rng), w), DimensionError);
}

TEST(VntRelu, PositiveHalfSpaceKeepsFeature) {
  EXPECT_EQ(vnt_relu(Vec3(1, 0, 0), Vec3(1, 0, 0), Vec3::Zero()), Vec3(1, 0, 0));
}

TEST(VntRelu, OppositeDirectionClipsToOrigin) {
  const Vec3 r = vnt_relu(Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3::Zero());
  EXPECT_LT(r.cwiseAbs().maxCoeff(), 3.0 * kDirectionEps);
}

TEST(VntRelu, SharedShiftMovesOutput) {
  const Vec3 s(0, 0, 5);
  const Vec3 base = vnt_relu(Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3::Zero());
  const Vec3 moved = vnt_relu(Vec3(1, 0, 0) + s, Vec3(-1, 0, 0) + s, s);
  EXPECT_LT((moved - (base + s)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(VntRelu, IdempotentOnOutputs) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const Vec3 q(rng.normal(), rng.normal(), rng.normal());
    const Vec3 k(rng.normal(), rng.normal(), rng.normal());
    const Vec3 o(rng.normal(), rng.normal(), rng.normal());
    const Vec3 once = vnt_relu(q, k, o);
    const double scale = std::max(1.0, (q - o).norm());
    if ((once - o).dot(k - o) >= 0.0) {
      EXPECT_EQ(vnt_relu(once, k, o), once);
    } else {
      EXPECT_LT((vnt_relu(once, k, o) - once).cwiseAbs().maxCoeff(), 10.0 * kDirectionEps * scale);
    }
  }
}

TEST(VntLeakyRelu, ZeroSlopeEqualsRelu) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const Vec3 q(rng.normal(), rng.normal(), rng.normal());
    const Vec3 k(rng.normal(), rng.normal(), rng.normal());
    const Vec3 o(rng.normal(), rng.normal(), rng.normal());
    EXPECT_EQ(vnt_leaky_relu(q, k, o, 0.0), vnt_relu(q, k, o));
  }
}

TEST(VntLeakyRelu, SlopeOneRejected) {
  EXPECT_THROW(vnt_leaky_relu(Vec3(1, 0, 0), Vec3(1, 0, 0), Vec3::Zero(), 1.0), ContractError);
}

TEST(VntLeakyRelu, ConvexCombination) {
  const Vec3 r = vnt_leaky_relu(Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3::Zero(), 0.2);
  EXPECT_LT((r - Vec3(0.2, 0, 0)).cwiseAbs().maxCoeff(), 3.0 * kDirectionEps);
}

TEST(VntLeakyRelu, SetFormMatchesPointwiseForm) {
  Rng rng(7);
  const auto q = random_feature_set(3, 5, rng);
  const auto k = random_feature_set(1, 5, rng);
  const auto o = random_feature_set(3, 5, rng);
  const auto out = leaky_relu_set(q, k, o, 0.2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t n = 0; n < 5; ++n) {
      const Vec3 expect = vnt_leaky_relu(q.vector(c, n), k.vector(0, n), o.vector(c, n), 0.2);
      EXPECT_LT((out.vector(c, n) - expect).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(VntLeakyRelu, SetGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor q = random_tensor({2, 4, 3}, rng);
    Tensor k = random_tensor({2, 4, 3}, rng);
    Tensor o = random_tensor({1, 4, 3}, rng);
    auto f = [&] {
      return probe(leaky_relu_set(VectorFeatureSet(q), VectorFeatureSet(k), VectorFeatureSet(o), 0.2).tensor());
    };
    EXPECT_LT(gradient_error(f, {q, k, o}), 1e-6) << "seed " << seed;
    auto g = [&] { return probe(leaky_relu_set(VectorFeatureSet(q), VectorFeatureSet(k), std::nullopt, 0.2).tensor()); };
    EXPECT_LT(gradient_error(g, {q, k}), 1e-6) << "seed " << seed;
  }
}

TEST(VntMaxPool, SinglePointIsSelected) {
  Rng rng(8);
  RowStochasticWeights k(2, 2, rng), o(2, 2, rng);
  const auto v = random_feature_set(2, 1, rng);
  const auto r = vnt_maxpool(v, k, o);
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{0, 0}));
  EXPECT_EQ(residual(r.pooled, v), 0.0);
}

TEST(VntMaxPool, HigherScoreWins) {
  // K picks channel 1 and O picks channel 0, so channel 1 scores |V1 - V0|^2: 1 and 3.
  const auto k = weights_from(2, 2, {0, 1, 0, 1});
  const auto o = weights_from(2, 2, {1, 0, 1, 0});
  const auto v = set_of(2, 2, {0, 0, 0, 0, 0, 0, 1, 0, 0, 0, std::sqrt(3.0), 0});
  const auto r = vnt_maxpool(v, k, o);
  EXPECT_EQ(r.argmax[1], 1u);
  EXPECT_EQ(r.pooled.vector(1, 0), v.vector(1, 1));
}

TEST(VntMaxPool, TiesGoToFirstPoint) {
  Rng rng(9);
  RowStochasticWeights k(1, 1, rng), o(1, 1, rng);
  const auto v = set_of(1, 3, {1, 0, 0, 1, 0, 0, 1, 0, 0});
  EXPECT_EQ(vnt_maxpool(v, k, o).argmax[0], 0u);
}

TEST(VntMaxPool, MatchesBruteForceForSmallSets) {
  Rng rng(10);
  for (int t = 0; t < 500; ++t) {
    const std::size_t c = 1 + rng.index(4), n = 1 + rng.index(8);
    RowStochasticWeights k(c, c, rng), o(c, c, rng);
    const auto v = random_feature_set(c, n, rng);
    const auto r = vnt_maxpool(v, k, o);
    const auto expect = brute_maxpool(v, k, o);
    EXPECT_EQ(r.argmax, expect);
    for (std::size_t ch = 0; ch < c; ++ch) EXPECT_EQ(r.pooled.vector(ch, 0), v.vector(ch, expect[ch]));
  }
}

TEST(VntMaxPool, SelectionInvariantUnderRigidMotion) {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    RowStochasticWeights k(4, 4, rng), o(4, 4, rng);
    const auto v = random_feature_set(4, 16, rng);
    const RigidTransform g = sample_rigid(rng, 10.0);
    const auto base = vnt_maxpool(v, k, o);
    const auto moved = vnt_maxpool(transform_features(v, g.rotation, g.translation), k, o);
    EXPECT_EQ(base.argmax, moved.argmax);
    EXPECT_LT(residual(moved.pooled, transform_features(base.pooled, g.rotation, g.translation)), 1e-12);
  }
}

TEST(VntMaxPool, GradientFlowsToSelectedPoints) {
  Rng rng(12);
  RowStochasticWeights k(3, 3, rng), o(3, 3, rng);
  Tensor v = random_tensor({3, 6, 3}, rng);
  EXPECT_LT(gradient_error([&] { return probe(vnt_maxpool(VectorFeatureSet(v), k, o).pooled.tensor()); }, {v}), 1e-7);
}

TEST(TranslationInvariant, EqualInputsGiveZero) {
  Rng rng(13);
  const auto pooled = random_feature_set(2, 1, rng);
  const auto set = VectorFeatureSet(expand(pooled.tensor(), 1, 4));
  const auto out = translation_invariant(set, pooled);
  for (double x : out.tensor().data()) EXPECT_EQ(x, 0.0);
}

TEST(TranslationInvariant, RigidMotionRotatesOnly) {
  Rng rng(14);
  for (int t = 0; t < 100; ++t) {
    const auto set = random_feature_set(3, 5, rng);
    const auto ref = random_feature_set(1, 5, rng);
    const RigidTransform g = sample_rigid(rng, 10.0);
    const auto moved = translation_invariant(transform_features(set, g.rotation, g.translation),
                                             transform_features(ref, g.rotation, g.translation));
    const auto expect = transform_features(translation_invariant(set, ref), g.rotation, Vec3::Zero());
    EXPECT_LT(residual(moved, expect), 1e-12);
  }
}

TEST(TranslationInvariant, ShapeMismatchIsDimensionError) {
  Rng rng(15);
  EXPECT_THROW(translation_invariant(random_feature_set(3, 5, rng), random_feature_set(2, 4, rng)), DimensionError);
}

TEST(VnLinear, IdentityWeight) {
  Rng rng(16);
  const auto v = random_feature_set(3, 4, rng);
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(residual(vn_linear(v, eye), v), 0.0);
}

TEST(VnLinear, RotationCommutesButTranslationDoesNot) {
  Rng rng(17);
  for (int t = 0; t < 100; ++t) {
    const Tensor w = random_tensor({2, 3}, rng, false);
    const auto v = random_feature_set(3, 4, rng);
    const RigidTransform g = sample_rigid(rng, 10.0);
    EXPECT_LT(residual(vn_linear(transform_features(v, g.rotation, Vec3::Zero()), w),
                       transform_features(vn_linear(v, w), g.rotation, Vec3::Zero())),
              1e-12);
  }
  const Tensor w = Tensor::from({1, 2}, {1.0, 1.0});
  const auto v = random_feature_set(2, 1, rng);
  const Vec3 t(1, 2, 3);
  EXPECT_GT(residual(vn_linear(transform_features(v, Mat3::Identity(), t), w),
                     transform_features(vn_linear(v, w), Mat3::Identity(), t)),
            0.5);
}

TEST(VnRelu, HalfSpaces) {
  EXPECT_EQ(vn_relu(Vec3(1, 2, 0), Vec3(1, 0, 0)), Vec3(1, 2, 0));
  EXPECT_LT(vn_relu(Vec3(1, 0, 0), Vec3(-1, 0, 0)).cwiseAbs().maxCoeff(), 3.0 * kDirectionEps);
}

TEST(VnRelu, RotationCommutes) {
  Rng rng(18);
  for (int t = 0; t < 100; ++t) {
    const Vec3 q(rng.normal(), rng.normal(), rng.normal());
    const Vec3 k(rng.normal(), rng.normal(), rng.normal());
    const Mat3 r = sample_uniform_rotation(rng);
    EXPECT_LT((vn_relu(q * r, k * r) - vn_relu(q, k) * r).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(VnInvariant, RotationLeavesOutputUnchanged) {
  Rng rng(19);
  for (int t = 0; t < 100; ++t) {
    const auto z = random_feature_set(4, 6, rng);
    const Tensor w = random_tensor({3, 4}, rng, false);
    const Mat3 r = sample_uniform_rotation(rng);
    const auto zr = transform_features(z, r, Vec3::Zero());
    const Tensor base = vn_invariant(z, vn_linear(z, w));
    const Tensor moved = vn_invariant(zr, vn_linear(zr, w));
    EXPECT_LT(max_abs_diff(base.data(), moved.data()), 1e-12);
  }
}

TEST(VnInvariant, ZeroInputGivesZero) {
  const auto z = VectorFeatureSet(Tensor::zeros({2, 3, 3}));
  const Tensor out = vn_invariant(z, VectorFeatureSet(Tensor::zeros({3, 3, 3})));
  for (double x : out.data()) EXPECT_EQ(x, 0.0);
}

TEST(VnInvariant, UnitVectorAgainstIdentityFrame) {
  const auto z = set_of(1, 1, {1, 0, 0});
  const auto frame = set_of(3, 1, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor out = vn_invariant(z, frame);
  EXPECT_EQ(out.at({0, 0, 0}), 1.0);
  EXPECT_EQ(out.at({0, 0, 1}), 0.0);
  EXPECT_EQ(out.at({0, 0, 2}), 0.0);
}

TEST(VnInvariant, GradientsMatchFiniteDifferences) {
  Rng rng(20);
  Tensor z = random_tensor({2, 3, 3}, rng);
  Tensor f = random_tensor({3, 3, 3}, rng);
  EXPECT_LT(gradient_error([&] { return probe(vn_invariant(VectorFeatureSet(z), VectorFeatureSet(f))); }, {z, f}), 1e-7);
}

TEST(VnMeanPool, IdenticalFeaturesPoolToThemselves) {
  Rng rng(21);
  const auto one = random_feature_set(3, 1, rng);
  EXPECT_LT(residual(vn_meanpool(VectorFeatureSet(expand(one.tensor(), 1, 5))), one), 1e-15);
}

TEST(VnMeanPool, CommutesWithRigidMotion) {
  Rng rng(22);
  for (int t = 0; t < 50; ++t) {
    const auto v = random_feature_set(3, 7, rng);
    const RigidTransform g = sample_rigid(rng, 10.0);
    EXPECT_LT(residual(vn_meanpool(transform_features(v, g.rotation, g.translation)),
                       transform_features(vn_meanpool(v), g.rotation, g.translation)),
              1e-12);
  }
}

TEST(VnBatchNorm, MeanNormBecomesGamma) {
  Rng rng(23);
  const auto v = random_feature_set(4, 9, rng);
  const auto out = vn_batchnorm(v, Tensor::filled({4}, 1.0), nullptr);
  for (std::size_t c = 0; c < 4; ++c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < 9; ++n) {
      acc += out.vector(c, n).norm();
      EXPECT_LT((out.vector(c, n).normalized() - v.vector(c, n).normalized()).cwiseAbs().maxCoeff(), 1e-12);
    }
    EXPECT_NEAR(acc / 9.0, 1.0, 1e-6);
  }
}

TEST(VnBatchNorm, GradientsMatchFiniteDifferences) {
  Rng rng(24);
  Tensor v = random_tensor({2, 5, 3}, rng);
  Tensor gamma = Tensor::parameter({2}, {0.7, 1.3});
  EXPECT_LT(gradient_error([&] { return probe(vn_batchnorm(VectorFeatureSet(v), gamma, nullptr).tensor()); }, {v, gamma}),
            1e-6);
}

TEST(ChannelMix, GradientsMatchFiniteDifferences) {
  Rng rng(25);
  Tensor w = random_tensor({3, 2}, rng);
  Tensor v = random_tensor({2, 4, 3}, rng);
  EXPECT_LT(gradient_error([&] { return probe(channel_mix(w, VectorFeatureSet(v)).tensor()); }, {w, v}), 1e-7);
}

TEST(Layers, EveryKindHonoursItsContract) {
  LayerZoo zoo(26);
  ASSERT_EQ(zoo.layers.size(), kAllLayerKinds.size());
  for (const auto& c : zoo.cases(100, 27)) {
    const auto rep = run_contract(c);
    EXPECT_TRUE(rep.passed) << rep.to_json().dump();
  }
}

TEST(Layers, EveryKindBackpropagatesCorrectly) {
  LayerZoo zoo(28, 3);
  for (const auto& layer : zoo.layers) {
    Rng rng(29);
    Tensor v = random_tensor({layer->in_channels(), 5, 3}, rng);
    std::vector<Tensor> leaves{v};
    std::vector<NamedTensor> params;
    layer->parameters(params);
    for (auto& p : params) leaves.push_back(p.tensor);
    auto f = [&] { return probe(layer->forward(VectorFeatureSet(v), Mode::kTrain).tensor()); };
    EXPECT_LT(gradient_error(f, leaves), 1e-5) << layer->name();
  }
}

TEST(Layers, WrongChannelCountIsDimensionError) {
  LayerZoo zoo(30, 3);
  Rng rng(31);
  for (const auto& layer : zoo.layers) {
    EXPECT_THROW(layer->forward(random_feature_set(layer->in_channels() + 1, 4, rng), Mode::kEval), DimensionError)
        << layer->name();
  }
}
