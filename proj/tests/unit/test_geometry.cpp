// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numbers>

#include "streamsplat/geometry.hpp"
#include "support.hpp"

using namespace streamsplat;

TEST(Geometry, ComposeAppliesRightOperandFirst) {
    std::mt19937_64 rng(1);
    const Pose3d a = test::random_pose(rng);
    const Pose3d b = test::random_pose(rng);
    const Vec3d p(0.3, -1.2, 2.5);
    EXPECT_LT((apply(compose(a, b), p) - apply(a, apply(b, p))).norm(), 1e-12);
}

TEST(Geometry, InverseUndoesPoseAndSim3) {
    std::mt19937_64 rng(2);
    const Pose3d g = test::random_pose(rng);
    const Sim3d s{2.5, test::random_pose(rng)};
    const Vec3d p(1.0, 2.0, -0.5);
    EXPECT_LT((apply(inverse(g), apply(g, p)) - p).norm(), 1e-12);
    EXPECT_LT((apply(inverse(s), apply(s, p)) - p).norm(), 1e-12);
    const Sim3d id = compose(s, inverse(s));
    EXPECT_NEAR(id.scale, 1.0, 1e-12);
    EXPECT_LT((id.pose.rotation - Mat3d::Identity()).norm(), 1e-12);
    EXPECT_LT(id.pose.translation.norm(), 1e-12);
}

TEST(Geometry, Sim3ComposeMatchesSequentialApplication) {
    std::mt19937_64 rng(3);
    const Sim3d a{0.7, test::random_pose(rng)};
    const Sim3d b{1.9, test::random_pose(rng)};
    const Vec3d p(-0.4, 0.8, 1.1);
    EXPECT_LT((apply(compose(a, b), p) - apply(a, apply(b, p))).norm(), 1e-12);
}

TEST(Geometry, CameraCenterMapsToOrigin) {
    std::mt19937_64 rng(4);
    const Pose3d g = test::random_pose(rng);
    EXPECT_LT(apply(g, g.center()).norm(), 1e-12);
}

TEST(Geometry, QuaternionRoundTripKeepsPositiveScalar) {
    std::mt19937_64 rng(5);
    for (int k = 0; k < 50; ++k) {
        const Mat3d r = test::random_rotation(rng);
        const Eigen::Vector4d q = rotation_to_quaternion(r);
        EXPECT_GE(q(0), 0.0);
        EXPECT_NEAR(q.norm(), 1.0, 1e-12);
        EXPECT_LT((quaternion_to_rotation(q) - r).norm(), 1e-12);
        EXPECT_LT((quaternion_to_rotation(Eigen::Vector4d(3.0 * q)) - r).norm(), 1e-12);
    }
}

TEST(Geometry, RotationAngleMatchesAxisAngle) {
    const Vec3d axis = Vec3d(1, 2, -1).normalized();
    for (double angle : {1e-9, 1e-4, 0.3, 1.5, 3.0}) {
        const Mat3d r = exp_so3(Vec3d(axis * angle));
        EXPECT_NEAR(rotation_angle(Mat3d(Mat3d::Identity()), r), angle, 1e-12 * std::max(1.0, angle));
    }
    EXPECT_NEAR(rotation_angle(Mat3d(Mat3d::Identity()), Mat3d(exp_so3(Vec3d(0, 0, std::numbers::pi)))),
                std::numbers::pi, 1e-9);
}

TEST(Geometry, OrthonormalizeProjectsOntoRotations) {
    std::mt19937_64 rng(6);
    const Mat3d r = test::random_rotation(rng);
    Mat3d noisy = r;
    noisy(0, 1) += 1e-3;
    noisy(2, 0) -= 2e-3;
    const Mat3d o = orthonormalize(noisy);
    EXPECT_LT((o.transpose() * o - Mat3d::Identity()).norm(), 1e-12);
    EXPECT_NEAR(o.determinant(), 1.0, 1e-12);
    EXPECT_LT(rotation_angle(o, r), 3e-3);
    const Mat3d reflection = Vec3d(1, 1, -1).asDiagonal();
    EXPECT_NEAR(orthonormalize(reflection).determinant(), 1.0, 1e-12);
}

TEST(Geometry, ProjectUnprojectRoundTrip) {
    std::mt19937_64 rng(7);
    const Intrinsicsd intr{50.0, 64, 48};
    const Pose3d g = test::random_pose(rng, 0.5, 0.5);
    const Vec2d px(10.25, 40.5);
    const Vec3d p = unproject(intr, g, px, 3.5);
    const auto back = project(intr, g, p);
    ASSERT_TRUE(back.has_value());
    EXPECT_LT((*back - px).norm(), 1e-10);
    EXPECT_NEAR(apply(g, p).z(), 3.5, 1e-12);
}

TEST(Geometry, PrincipalPointIsImageCenter) {
    const Intrinsicsd intr{30.0, 64, 48};
    EXPECT_DOUBLE_EQ(intr.cx(), 31.5);
    EXPECT_DOUBLE_EQ(intr.cy(), 23.5);
    const auto c = project(intr, Pose3d::Identity(), Vec3d(0, 0, 2));
    ASSERT_TRUE(c.has_value());
    EXPECT_DOUBLE_EQ(c->x(), 31.5);
    EXPECT_DOUBLE_EQ(c->y(), 23.5);
}

TEST(Geometry, ProjectRejectsPointsBehindCamera) {
    const Intrinsicsd intr{30.0, 16, 16};
    EXPECT_FALSE(project(intr, Pose3d::Identity(), Vec3d(0, 0, -1)).has_value());
    EXPECT_FALSE(project(intr, Pose3d::Identity(), Vec3d(1, 0, 0)).has_value());
    EXPECT_THROW(unproject(intr, Pose3d::Identity(), Vec2d(1, 1), 0.0), InvalidArgument);
}

TEST(Geometry, PoseChainStaysOrthonormalOverLongChains) {
    std::mt19937_64 rng(8);
    const Pose3d step = test::random_pose(rng, 0.05, 0.01);
    PoseChain<double> chain(Pose3d::Identity(), 16);
    Pose3d naive;
    for (int k = 0; k < 10000; ++k) {
        chain.push(step);
        naive = compose(step, naive);
    }
    const Mat3d r = chain.value().rotation;
    EXPECT_LT((r.transpose() * r - Mat3d::Identity()).norm(), 1e-12);
    EXPECT_LT(rotation_angle(r, orthonormalize(naive.rotation)), 1e-8);
}
