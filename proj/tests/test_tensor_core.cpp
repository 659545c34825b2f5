#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace vnt;
using namespace vnt::testing;

namespace {

std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
  return out;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor r = matmul(eye, m);
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, RowTimesColumn) {
  const Tensor r = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  ASSERT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r.item(), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Tensor a = random_tensor({3, 3}, rng, false);
    const Tensor b = random_tensor({3, 3}, rng, false);
    const auto expect = naive_matmul(a, b);
    EXPECT_LT(max_abs_diff(matmul(a, b).data(), expect), 1e-12);
  }
  const Tensor a = random_tensor({7, 5}, rng, false);
  const Tensor b = random_tensor({5, 4}, rng, false);
  EXPECT_LT(max_abs_diff(matmul(a, b).data(), naive_matmul(a, b)), 1e-12);
}

TEST(Matmul, BatchedMatchesPerSlice) {
  Rng rng(4);
  const Tensor a = random_tensor({2, 3, 4}, rng, false);
  const Tensor b = random_tensor({4, 2}, rng, false);
  const Tensor r = matmul(a, b);
  ASSERT_EQ(r.shape(), (Shape{2, 3, 2}));
  for (std::size_t s = 0; s < 2; ++s) {
    const Tensor slice = reshape(narrow(a, 0, s, 1), {3, 4});
    const auto expect = naive_matmul(slice, b);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(r.data()[s * 6 + i], expect[i], 1e-12);
  }
}

TEST(Matmul, InnerMismatchIsDimensionError) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(matmul(Tensor::zeros({3}), Tensor::zeros({3, 1})), DimensionError);
}

TEST(Backward, SquareHasGradientSix) {
  Tensor x = Tensor::parameter({}, {3.0});
  Tape tape;
  auto scope = tape.activate();
  tape.backward(square(x));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SumOfSquaresGivesTwiceInput) {
  Rng rng(5);
  Tensor x = random_tensor({6}, rng);
  Tape tape;
  auto scope = tape.activate();
  tape.backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.data()[i]);
}

TEST(Backward, GradientsAccumulateAcrossTapes) {
  Tensor x = Tensor::parameter({}, {2.0});
  for (int k = 0; k < 2; ++k) {
    Tape tape;
    auto scope = tape.activate();
    tape.backward(scale(x, 3.0));
  }
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarRootIsContractError) {
  Tensor x = Tensor::parameter({2}, {1, 2});
  Tape tape;
  auto scope = tape.activate();
  EXPECT_THROW(tape.backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, SecondSweepIsContractError) {
  Tensor x = Tensor::parameter({}, {1.0});
  Tape tape;
  auto scope = tape.activate();
  const Tensor y = square(x);
  tape.backward(y);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, NothingRecordedWithoutActiveTape) {
  Tensor x = Tensor::parameter({}, {1.0});
  const Tensor y = square(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor a = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({3, 5}, rng);
    Tensor c = random_tensor({5}, rng);
    auto f = [&] { return mean(relu(add(matmul(a, b), c))); };
    EXPECT_LT(gradient_error(f, {a, b, c}, 1e-5), 1e-5) << "seed " << seed;
  }
}

TEST(Ops, ElementwiseGradientsMatchFiniteDifferences) {
  Rng rng(6);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({1, 3}, rng);
  EXPECT_LT(gradient_error([&] { return probe(sub(mul(a, b), add_scalar(scale(a, 0.5), 1.0))); }, {a, b}), 1e-7);
  EXPECT_LT(gradient_error([&] { return probe(square(transpose(a))); }, {a}), 1e-7);
  EXPECT_LT(gradient_error([&] { return mse(a, expand(b, 0, 2)); }, {a, b}), 1e-7);
}

TEST(Ops, ShapeOpsMatchFiniteDifferences) {
  Rng rng(7);
  Tensor a = random_tensor({2, 3, 3}, rng);
  Tensor b = random_tensor({1, 3, 3}, rng);
  EXPECT_LT(gradient_error([&] { return probe(reshape(a, {6, 3})); }, {a}), 1e-7);
  EXPECT_LT(gradient_error([&] { return probe(concat({a, b}, 0)); }, {a, b}), 1e-7);
  EXPECT_LT(gradient_error([&] { return probe(concat({a, a}, 1)); }, {a}), 1e-7);
  EXPECT_LT(gradient_error([&] { return probe(narrow(a, 1, 1, 2)); }, {a}), 1e-7);
}

TEST(Ops, AffineMatchesComposedOpsAndFiniteDifferences) {
  Rng rng(8);
  Tensor x = random_tensor({5, 4}, rng);
  Tensor w = random_tensor({4, 3}, rng);
  Tensor bias = random_tensor({1, 3}, rng);
  for (bool apply_relu : {false, true}) {
    Tensor composed = add(matmul(x, w), bias);
    if (apply_relu) composed = relu(composed);
    EXPECT_LT(max_abs_diff(affine(x, w, bias, apply_relu).data(), composed.data()), 1e-12);
    EXPECT_LT(gradient_error([&] { return probe(affine(x, w, bias, apply_relu)); }, {x, w, bias}), 1e-7);
  }
  EXPECT_THROW(affine(x, w, Tensor::zeros({5, 3}), false), DimensionError);
}

TEST(Reduce, MeanOfTwoAndFour) {
  EXPECT_EQ(reduce(Tensor::from({2}, {2, 4}), 0, ReduceKind::kMean).item(), 3.0);
}

TEST(Reduce, SumOfZerosIsZero) {
  EXPECT_EQ(reduce(Tensor::zeros({4}), 0, ReduceKind::kSum).item(), 0.0);
}

TEST(Reduce, InvalidAxisIsDimensionError) {
  EXPECT_THROW(reduce(Tensor::zeros({2, 2}), 2, ReduceKind::kSum), DimensionError);
  EXPECT_THROW(reduce(Tensor::zeros({2, 2}), -3, ReduceKind::kSum), DimensionError);
}

TEST(Reduce, MatchesLoopOracleOnEveryAxis) {
  Rng rng(9);
  const Tensor t = random_tensor({3, 4, 5}, rng, false);
  const std::size_t dims[3] = {3, 4, 5};
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const Tensor s = reduce(t, static_cast<std::ptrdiff_t>(axis), ReduceKind::kSum);
    const Tensor m = reduce(t, static_cast<std::ptrdiff_t>(axis), ReduceKind::kMax);
    std::size_t out = 0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 5; ++k) {
          const std::size_t idx[3] = {i, j, k};
          if (idx[axis] != 0) continue;
          double acc = 0.0, best = -INFINITY;
          for (std::size_t r = 0; r < dims[axis]; ++r) {
            std::size_t p[3] = {i, j, k};
            p[axis] = r;
            const double v = t.at({p[0], p[1], p[2]});
            acc += v;
            best = std::max(best, v);
          }
          EXPECT_NEAR(s.data()[out], acc, 1e-12);
          EXPECT_EQ(m.data()[out], best);
          ++out;
        }
  }
}

TEST(Reduce, GradientsMatchFiniteDifferences) {
  Rng rng(10);
  Tensor t = random_tensor({3, 4, 2}, rng);
  for (auto kind : {ReduceKind::kSum, ReduceKind::kMean, ReduceKind::kMax}) {
    for (std::ptrdiff_t axis = 0; axis < 3; ++axis) {
      EXPECT_LT(gradient_error([&] { return probe(reduce(t, axis, kind, true)); }, {t}), 1e-7);
    }
  }
}

TEST(Reduce, MaxRoutesTiedGradientToFirstEntry) {
  Tensor t = Tensor::parameter({3}, {1.0, 5.0, 5.0});
  Tape tape;
  auto scope = tape.activate();
  tape.backward(reduce(t, 0, ReduceKind::kMax));
  EXPECT_EQ(t.grad(), (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(Svd3, IdentityHasUnitSingularValues) {
  const Svd3 d = svd3(Mat3(Mat3::Identity()));
  EXPECT_LT((d.sigma - Eigen::Vector3d::Ones()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((d.u * d.sigma.asDiagonal() * d.v.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Svd3, DiagonalGivesSortedValues) {
  const Svd3 d = svd3(Mat3(Eigen::Vector3d(1, 3, 2).asDiagonal()));
  EXPECT_NEAR(d.sigma[0], 3.0, 1e-14);
  EXPECT_NEAR(d.sigma[1], 2.0, 1e-14);
  EXPECT_NEAR(d.sigma[2], 1.0, 1e-14);
}

TEST(Svd3, RandomMatricesMultiplyBack) {
  Rng rng(11);
  for (int t = 0; t < 1000; ++t) {
    Mat3 m;
    for (int i = 0; i < 9; ++i) m.data()[i] = rng.normal();
    const Svd3 d = svd3(m);
    EXPECT_LT((d.u * d.sigma.asDiagonal() * d.v.transpose() - m).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT(orthonormality_error(d.u), 1e-12);
    EXPECT_LT(orthonormality_error(d.v), 1e-12);
    EXPECT_GE(d.sigma[0], d.sigma[1]);
    EXPECT_GE(d.sigma[1], d.sigma[2]);
    EXPECT_GE(d.sigma[2], 0.0);
  }
}

TEST(Svd3, RankDeficientStillOrthonormal) {
  Mat3 m = Mat3::Zero();
  m(0, 0) = 2.0;
  m(1, 0) = 1.0;
  const Svd3 d = svd3(m);
  EXPECT_LT((d.u * d.sigma.asDiagonal() * d.v.transpose() - m).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(orthonormality_error(d.u), 1e-12);
  EXPECT_LT(orthonormality_error(d.v), 1e-12);
}

TEST(Svd3, NonFiniteInputIsNumericError) {
  Mat3 m = Mat3::Identity();
  m(1, 2) = std::nan("");
  EXPECT_THROW(svd3(m), NumericError);
  EXPECT_THROW(svd3(to_tensor(m)), NumericError);
}

TEST(Tensor, ShapeAndDataValidation) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::zeros({1, 1, 1, 1, 1}), DimensionError);
  EXPECT_THROW(Tensor::zeros({2}).item(), ContractError);
}

TEST(Tensor, NonFiniteResultIsNumericErrorWhenChecked) {
  const bool saved = finite_checks_enabled();
  finite_checks_enabled() = true;
  EXPECT_THROW(scale(Tensor::from({1}, {1e308}), 10.0), NumericError);
  finite_checks_enabled() = saved;
}
