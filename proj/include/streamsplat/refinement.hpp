// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "streamsplat/geometry.hpp"
#include "streamsplat/matching.hpp"
#include "streamsplat/point_map.hpp"
#include "streamsplat/solver.hpp"

namespace streamsplat {

/// Bilinear sample of the map at pixel i shifted by offset (dx, dy). Falls
/// back to the point at i when a corner of the cell is not finite.
Vec3d sample_point(const PointMap &map, int i, const Eigen::Vector2d &offset);

/// Similarity taking the current frame's cross-frame points at matched pixels
/// j onto the previous frame's self-frame points at pixels i, weighted by
/// the product of their confidences. With `offsets` (one per match, see
/// subpixel_offsets) the previous points are sampled at i + offset.
Registration residual_transform(const MatchSet &matches, const PointMap &prev_self, const PointMap &cur_cross,
                                const std::vector<Eigen::Vector2d> &offsets = {});

/// Weighted RMS of |cur_cross_j - prev_self_i| over the matches, with the
/// same weights and sampling as residual_transform; the residual of the
/// identity.
double match_residual_rms(const MatchSet &matches, const PointMap &prev_self, const PointMap &cur_cross,
                          const std::vector<Eigen::Vector2d> &offsets = {});

/// Pointwise application of delta; confidences are carried over unchanged.
PointMap apply_refinement(const PointMap &cur_cross, const Sim3d &delta);

/// PnP-RANSAC on (refined world point of current pixel j, pixel j) for every
/// match (i, j). `refined_world` is the refined current-frame map in world
/// coordinates; pixels whose point is not finite are skipped.
PnpResult refine_pose(const MatchSet &matches, const PointGrid &refined_world, int width, const Intrinsicsd &intr,
                      const RansacConfig &config = {});

struct GateConfig {
    double max_rotation_deg = 15.0;
    double translation_factor = 3.0; ///< times the running median inter-frame translation
    int window = 8;
};

struct GateDecision {
    bool accepted = true;
    double rotation_deg = 0.0;
    double translation = 0.0;     ///< camera-center displacement
    double median_translation = 0.0;
};

/// Accepts a candidate pose when its rotation and translation relative to the
/// previous pose stay within the configured bounds. `history` holds earlier
/// inter-frame translations, oldest first; only the last `window` are used.
/// With an empty history the candidate is accepted.
GateDecision motion_gate(const Pose3d &prev_pose, const Pose3d &candidate, const std::vector<double> &history,
                         const GateConfig &config = {});

struct RefinementReport {
    int frame_id = 0;
    double delta_rotation_deg = 0.0;
    double delta_translation = 0.0;
    double residual_before = 0.0; ///< match RMS under the identity
    double residual_after = 0.0;  ///< match RMS under delta
    bool delta_applied = false;
    bool accepted = true;
    int inliers = 0;
};

/// One JSON object per line, without the trailing newline.
std::string to_json_line(const RefinementReport &report);

} // namespace streamsplat
