// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <filesystem>

#include "streamsplat/image.hpp"

namespace streamsplat {

/// Per-pixel 3D points of frame `frame_id` expressed in the camera frame of
/// `ref_frame_id`, with a confidence >= 1 per pixel.
struct PointMap {
    int frame_id = 0;
    int ref_frame_id = 0;
    int height = 0;
    int width = 0;
    PointGrid points;
    Eigen::VectorXd confidence;

    PointMap() = default;
    PointMap(int frame, int ref, int h, int w)
        : frame_id(frame), ref_frame_id(ref), height(h), width(w), points(PointGrid::Zero(h * w, 3)),
          confidence(Eigen::VectorXd::Ones(h * w)) {}

    int size() const { return height * width; }
    Eigen::Vector3d point(int i) const { return points.row(i).transpose(); }
};

/// Checks grid sizes and that every pixel with confidence > 1 is finite.
void validate(const PointMap &pm);

/// "PMAP" little-endian container: magic, u32 version=1, u32 H, u32 W,
/// i32 frame_id, i32 ref_frame_id, then H*W*3 float32 points and H*W
/// float32 confidences, row-major.
void write_point_map(const std::filesystem::path &path, const PointMap &pm);
PointMap read_point_map(const std::filesystem::path &path);

} // namespace streamsplat
