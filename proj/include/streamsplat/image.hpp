// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <filesystem>

namespace streamsplat {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using PointGrid = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Row-major RGB image; pixel (x, y) lives in row y * width + x.
struct Image {
    int height = 0;
    int width = 0;
    PointGrid rgb;

    Image() = default;
    Image(int h, int w, double fill = 0.0) : height(h), width(w), rgb(PointGrid::Constant(h * w, 3, fill)) {}

    int size() const { return height * width; }
    int index(int x, int y) const { return y * width + x; }
};

/// Binary PPM (P6, 8-bit); values are clamped to [0, 1] and rounded.
void write_ppm(const std::filesystem::path &path, const Image &image);
Image read_ppm(const std::filesystem::path &path);

} // namespace streamsplat
