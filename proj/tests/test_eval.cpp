#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace vnt;
using namespace vnt::testing;

namespace {

/// Mean pose by brute search over a dense set of rotations: the candidate
/// minimising the summed squared Frobenius distance.
Mat3 searched_mean(const std::vector<Mat3>& poses, Rng& rng) {
  Mat3 best = Mat3::Identity();
  double best_cost = std::numeric_limits<double>::infinity();
  auto cost = [&](const Mat3& c) {
    double s = 0.0;
    for (const auto& r : poses) s += (r - c).squaredNorm();
    return s;
  };
  for (int t = 0; t < 20000; ++t) {
    const Mat3 c = sample_uniform_rotation(rng);
    if (const double v = cost(c); v < best_cost) {
      best_cost = v;
      best = c;
    }
  }
  // Local refinement with shrinking random steps.
  for (double step = 10.0; step > 1e-4; step *= 0.7) {
    for (int t = 0; t < 200; ++t) {
      const Mat3 c = best * axis_rotation(static_cast<int>(rng.index(3)), rng.uniform(-step, step));
      if (const double v = cost(c); v < best_cost) {
        best_cost = v;
        best = c;
      }
    }
  }
  return best;
}

}  // namespace

TEST(Consistency, IdenticalPosesHaveZeroSpread) {
  Rng rng(1);
  const Mat3 r = sample_uniform_rotation(rng);
  const ConsistencyReport rep = consistency({r, r, r, r});
  EXPECT_EQ(rep.std_degrees, 0.0);
  EXPECT_EQ(rep.histogram[0], 1.0);
}

TEST(Consistency, TwoPosesTenDegreesApart) {
  const ConsistencyReport rep = consistency({Mat3::Identity(), axis_rotation(2, 10.0)});
  EXPECT_NEAR(rep.std_degrees, 5.0, 1e-9);
  EXPECT_NEAR(angular_distance(rep.mean_pose, axis_rotation(2, 5.0)), 0.0, 1e-9);
  EXPECT_DOUBLE_EQ(rep.histogram[0] + rep.histogram[1], 1.0);
}

TEST(Consistency, MeanPoseMatchesSearchedMinimiser) {
  Rng rng(2);
  for (int t = 0; t < 5; ++t) {
    const Mat3 centre = sample_uniform_rotation(rng);
    std::vector<Mat3> poses;
    for (int i = 0; i < 6; ++i) poses.push_back(centre * axis_rotation(static_cast<int>(rng.index(3)), rng.uniform(-40.0, 40.0)));
    EXPECT_LT(angular_distance(mean_pose(poses), searched_mean(poses, rng)), 0.05);
  }
}

TEST(Consistency, InvariantUnderCommonRotation) {
  Rng rng(3);
  std::vector<Mat3> poses, moved;
  const Mat3 g = sample_uniform_rotation(rng);
  for (int i = 0; i < 10; ++i) {
    poses.push_back(sample_uniform_rotation(rng));
    moved.push_back(poses.back() * g);
  }
  EXPECT_NEAR(consistency(poses).std_degrees, consistency(moved).std_degrees, 1e-9);
}

TEST(Consistency, TooFewPosesRejected) {
  EXPECT_THROW(consistency({Mat3::Identity()}), ContractError);
}

TEST(Histogram, UnitMassAndEdgeBins) {
  const auto h = deviation_histogram({0.0, 4.999, 5.0, 90.0, 180.0});
  EXPECT_DOUBLE_EQ(std::accumulate(h.begin(), h.end(), 0.0), 1.0);
  EXPECT_DOUBLE_EQ(h[0], 0.4);
  EXPECT_DOUBLE_EQ(h[1], 0.2);
  EXPECT_DOUBLE_EQ(h[18], 0.2);
  EXPECT_DOUBLE_EQ(h[35], 0.2);
  EXPECT_EQ(h.size(), 36u);
}

TEST(Histogram, TableHasOneRowPerBin) {
  const std::string t = histogram_table(deviation_histogram({1.0}));
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 36);
  EXPECT_EQ(t.substr(0, 6), "2.5 1\n");
}

TEST(Stability, IdenticalEstimatesScoreZero) {
  Rng rng(4);
  std::vector<std::vector<Mat3>> est(3), applied(3);
  for (int i = 0; i < 3; ++i) {
    const Mat3 r = sample_uniform_rotation(rng);
    for (int j = 0; j < 4; ++j) {
      est[i].push_back(r);
      applied[i].push_back(Mat3::Identity());
    }
  }
  EXPECT_EQ(stability(est, applied), 0.0);
  EXPECT_EQ(stability(est, {}, false), 0.0);
}

TEST(Stability, PerfectlyEquivariantEstimatesScoreZeroWithCompensation) {
  Rng rng(5);
  std::vector<std::vector<Mat3>> est(4), applied(4);
  for (int i = 0; i < 4; ++i) {
    const Mat3 base = sample_uniform_rotation(rng);
    for (int j = 0; j < 5; ++j) {
      const Mat3 g = sample_uniform_rotation(rng);
      applied[i].push_back(g);
      est[i].push_back(base * g);
    }
  }
  EXPECT_LT(stability(est, applied), 1e-5);
  EXPECT_GT(stability(est, applied, false), 10.0);
}

TEST(Stability, HandComputedSpread) {
  // Two copies at 0 and 10 degrees: each is 5 degrees from the mean.
  const std::vector<std::vector<Mat3>> est{{Mat3::Identity(), axis_rotation(0, 10.0)}};
  EXPECT_NEAR(stability(est, {}, false), std::sqrt(50.0), 1e-9);
}

TEST(Stability, RaggedGroupsRejected) {
  const std::vector<std::vector<Mat3>> est{{Mat3::Identity(), Mat3::Identity()}, {Mat3::Identity()}};
  EXPECT_THROW(stability(est, {}, false), ContractError);
  EXPECT_THROW(stability({{Mat3::Identity()}}, {}, false), ContractError);
  EXPECT_THROW(stability({}, {}, false), ContractError);
}

TEST(Stability, UntrainedModelIsStable) {
  const AutoEncoder model(tiny_model(6));
  Rng rng(7);
  std::vector<std::vector<Mat3>> est(5), applied(5);
  for (int i = 0; i < 5; ++i) {
    const PointCloud x = random_cloud(64, rng);
    for (int j = 0; j < 4; ++j) {
      const Mat3 g = sample_uniform_rotation(rng);
      applied[i].push_back(g);
      est[i].push_back(model.infer_pose(apply_transform(x, {g, Vec3::Zero()})).rotation);
    }
  }
  EXPECT_LT(stability(est, applied), 0.01);
}
