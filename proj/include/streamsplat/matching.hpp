// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "streamsplat/descriptors.hpp"
#include "streamsplat/geometry.hpp"
#include "streamsplat/point_map.hpp"

namespace streamsplat {

/// Reciprocal correspondences between frame_a (previous) and frame_b
/// (current); pairs hold linear pixel indices (i in a, j in b).
struct MatchSet {
    int frame_a = 0;
    int frame_b = 0;
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> scores; ///< cosine similarity per pair

    std::size_t size() const { return pairs.size(); }
};

/// Throws InvalidArgument unless every index is in range and used at most
/// once on each side.
void check_partial_bijection(const std::vector<std::pair<int, int>> &pairs, int size_a, int size_b);

/// Mutual nearest neighbours under cosine distance 1 - dot. Exhaustive scan;
/// ties go to the smaller linear index. Pairs come out ordered by i.
MatchSet reciprocal_match(const DescriptorMap &a, const DescriptorMap &b);

/// Sub-pixel position in a's grid, relative to pixel i, whose linearized
/// descriptor best explains b's descriptor at pixel j; one (dx, dy) per pair.
/// Each component is clamped to [-1, 1]; pairs without a full 3x3
/// neighbourhood around i get a zero offset.
std::vector<Eigen::Vector2d> subpixel_offsets(const MatchSet &matches, const DescriptorMap &a,
                                              const DescriptorMap &b);

struct MatchFilterConfig {
    int max_iterations = 256;
    double confidence = 0.999;
    double threshold_fraction = 0.02; ///< of the median matched depth
    int min_inliers = 4;
    std::uint64_t seed = 0;
};

struct FilteredMatches {
    MatchSet inliers;
    std::vector<bool> inlier_mask; ///< per input pair
    Sim3d transform;               ///< maps pm_a points onto pm_b points
    double threshold = 0.0;
    int iterations = 0;
};

/// RANSAC over 3-point similarity hypotheses between the matched 3D points.
/// Throws InvalidArgument with fewer than 4 matches and NumericalError when
/// no hypothesis gathers `min_inliers`.
FilteredMatches filter_matches_ransac(const MatchSet &matches, const PointMap &pm_a, const PointMap &pm_b,
                                      const MatchFilterConfig &config = {});

/// Base matches plus their 8-neighbourhood dilation.
struct ExtendedMatchSet {
    std::vector<std::pair<int, int>> pairs; ///< base pairs first
    std::vector<bool> dilated;
    int base_count = 0;

    std::size_t size() const { return pairs.size(); }
};

/// Adds (i + d, j + d) for the 8 neighbour offsets d where both pixels stay
/// inside the H x W grid. The first writer of a pixel wins (base pairs, then
/// dilations in scan order); a dilation is dropped when its previous-frame
/// pixel or its current-frame pixel is already taken.
ExtendedMatchSet extend_matches(const MatchSet &matches, int height, int width);

/// CSV rows "i,j,score,inlier" with a header line.
void write_matches_csv(const std::filesystem::path &path, const MatchSet &matches,
                       const std::vector<bool> &inlier_mask);

} // namespace streamsplat
