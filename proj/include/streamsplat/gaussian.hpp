// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <vector>

#include "streamsplat/geometry.hpp"

namespace streamsplat {

/// Anisotropic 3D Gaussian with degree-0 color. The quaternion is (w, x, y, z).
struct GaussianPrimitive {
    Vec3d mu = Vec3d::Zero();
    Eigen::Vector4d q = Eigen::Vector4d(1, 0, 0, 0);
    Vec3d scale = Vec3d::Constant(0.01);
    double opacity = 0.5;
    Vec3d color = Vec3d::Constant(0.5);

    /// R(q) diag(s)^2 R(q)^T.
    Mat3d covariance() const;
};

/// Gradient of a scalar with respect to every primitive field.
struct GaussianGrad {
    Vec3d mu = Vec3d::Zero();
    Eigen::Vector4d q = Eigen::Vector4d::Zero();
    Vec3d scale = Vec3d::Zero();
    double opacity = 0.0;
    Vec3d color = Vec3d::Zero();
};

/// Throws InvalidArgument unless |q| = 1 (1e-6), scales lie in
/// [1e-6, max_scale], opacity in (0, 1), color in [0, 1] and the covariance
/// admits a Cholesky factorization.
void check_invariants(const GaussianPrimitive &g, double max_scale);

/// Binary little-endian PLY with the usual splatting vertex layout:
/// x y z opacity scale_0..2 rot_0..3 f_dc_0..2, all float32. Opacity is
/// stored as a logit, scales as logarithms and colors as degree-0 SH
/// coefficients (c - 0.5) / 0.28209479177387814.
void write_ply(const std::filesystem::path &path, const std::vector<GaussianPrimitive> &gaussians);
std::vector<GaussianPrimitive> read_ply(const std::filesystem::path &path);

} // namespace streamsplat
