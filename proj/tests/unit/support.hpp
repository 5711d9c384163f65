// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <random>

#include "streamsplat/geometry.hpp"
#include "streamsplat/oracle.hpp"

namespace streamsplat::test {

inline Mat3d random_rotation(std::mt19937_64 &rng, double max_angle = 3.0) {
    std::normal_distribution<double> g;
    Vec3d axis(g(rng), g(rng), g(rng));
    std::uniform_real_distribution<double> u(0.0, max_angle);
    return exp_so3(Vec3d(axis.normalized() * u(rng)));
}

inline Pose3d random_pose(std::mt19937_64 &rng, double max_angle = 3.0, double max_translation = 1.0) {
    std::uniform_real_distribution<double> u(-max_translation, max_translation);
    return Pose3d{random_rotation(rng, max_angle), Vec3d(u(rng), u(rng), u(rng))};
}

/// A small noiseless terrain stream.
inline oracle::StreamConfig small_stream(int size = 24, int frames = 4, double focal = 22.0) {
    oracle::StreamConfig c;
    c.width = size;
    c.height = size;
    c.focal = focal;
    c.trajectory.frames = frames;
    return c;
}

/// Relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

} // namespace streamsplat::test
