// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <vector>

#include "streamsplat/gaussian.hpp"
#include "streamsplat/geometry.hpp"
#include "streamsplat/image.hpp"

namespace streamsplat {

struct RenderSettings {
    Vec3d background = Vec3d::Zero();
    double low_pass = 0.3;          ///< px^2 added to the 2D covariance diagonal
    double max_alpha = 0.99;
    double cutoff_sigma = 3.0;      ///< Mahalanobis radius beyond which a splat is ignored
    double min_transmittance = 1e-4;
    double near_plane = 0.01;
};

/// Screen-space state of one visible Gaussian.
struct ProjectedGaussian {
    int index = 0; ///< position in the input list
    Vec3d cam = Vec3d::Zero();
    Vec2d mean = Vec2d::Zero();
    Eigen::Matrix<double, 2, 3> jacobian;
    Mat3d cov_cam;
    Eigen::Matrix2d conic;
    Mat3d rotation; ///< R(q / |q|)
    Eigen::Vector4d q_unit;
    double q_norm = 1.0;
    Vec3d scale;
    double opacity = 0.0;
    Vec3d color;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

struct RenderResult {
    Image image;
    Eigen::VectorXd alpha; ///< 1 - final transmittance
    std::vector<ProjectedGaussian> projected; ///< front-to-back order
    std::vector<int> offsets;                 ///< per-pixel slice into `entries`
    std::vector<int> entries;                 ///< indices into `projected`
    std::vector<int> visited;                 ///< entries walked before early exit
    Eigen::VectorXd transmittance;
    int input_count = 0;
};

/// EWA splatting of the Gaussians into the camera's image grid, composited
/// front to back. Ties in depth are broken by the primitive contents, so the
/// output does not depend on the order of the input list.
RenderResult render(const std::vector<GaussianPrimitive> &gaussians, const CameraModel &camera,
                    const RenderSettings &settings = {});

/// Gradient of a scalar loss with respect to every input primitive given
/// dL/d(image) as an (H*W) x 3 grid. Culled primitives get zero gradients.
std::vector<GaussianGrad> render_backward(const RenderResult &forward, const PointGrid &grad_image,
                                          const CameraModel &camera, const RenderSettings &settings = {});

} // namespace streamsplat
