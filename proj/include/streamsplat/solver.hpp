// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "streamsplat/geometry.hpp"
#include "streamsplat/image.hpp"
#include "streamsplat/point_map.hpp"

namespace streamsplat {

struct FocalEstimate {
    double focal = 0.0;
    int iterations = 0;
    bool converged = false;
    int valid_pixels = 0;
    double mean_residual = 0.0; ///< mean |p - c - f (x, y) / z| in pixels
    double max_residual = 0.0;
};

/// Focal length minimizing the summed Euclidean reprojection distance of a
/// self-frame point map (principal point at the image center), solved with
/// Weiszfeld iterations. Throws NumericalError with fewer than 10 usable
/// pixels; a run that hits the iteration cap returns converged = false.
FocalEstimate estimate_focal(const PointMap &pm);

struct Registration {
    Sim3d transform;
    double rms_residual = 0.0; ///< weighted RMS of |T(src) - dst|
    double total_weight = 0.0;
    int used_points = 0;
};

/// Weighted closed-form similarity fit minimizing
/// sum_i w_i |s (R src_i + t') - dst_i|^2. The returned transform is in the
/// apply() convention s R x + t, i.e. t = s t'. Rows with non-finite
/// coordinates or weight below 1e-6 are ignored. Throws NumericalError for
/// zero total weight or a source set of rank < 2.
Registration register_points(const PointGrid &src, const PointGrid &dst, const Eigen::VectorXd &weights);

/// register_points over two point maps of identical grid size.
Registration register_pointmaps(const PointMap &src, const PointMap &dst, const Eigen::VectorXd &weights);

/// Per-pixel registration weights C_a * C_b.
Eigen::VectorXd confidence_weights(const PointMap &a, const PointMap &b);

struct RansacConfig {
    double threshold_px = 2.0;
    int max_iterations = 256;
    double confidence = 0.999;
    int refine_steps = 10;
    std::uint64_t seed = 0;
};

struct PnpResult {
    Pose3d pose;
    std::vector<bool> inliers;
    int inlier_count = 0;
    int iterations = 0;
    double rms_reprojection = 0.0; ///< pixels, over the inliers
};

/// World-to-camera pose from 3D-2D correspondences: 6-point DLT hypotheses
/// (with a plane-induced homography path for near-planar samples), RANSAC
/// with confidence-based early exit, and Gauss-Newton refinement on the
/// inliers. Throws InvalidArgument with fewer than 6 correspondences and
/// NumericalError when no model reaches 6 inliers.
PnpResult pnp_ransac(const std::vector<Vec3d> &points, const std::vector<Vec2d> &pixels, const Intrinsicsd &intr,
                     const RansacConfig &config = {});

/// Minimal-set pose from at least 6 normalized-coordinate correspondences.
Pose3d pnp_dlt(const std::vector<Vec3d> &points, const std::vector<Vec2d> &normalized);

/// Gauss-Newton on reprojection error in normalized coordinates.
Pose3d refine_pose_gauss_newton(const Pose3d &initial, const std::vector<Vec3d> &points,
                                const std::vector<Vec2d> &normalized, int steps);

} // namespace streamsplat
