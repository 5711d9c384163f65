// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "streamsplat/errors.hpp"

namespace streamsplat {

namespace {

Vec3d matched_point(const PointMap &prev_self, int i, const std::vector<Eigen::Vector2d> &offsets, std::size_t k) {
    return offsets.empty() ? prev_self.point(i) : sample_point(prev_self, i, offsets[k]);
}

} // namespace

Vec3d sample_point(const PointMap &map, int i, const Eigen::Vector2d &offset) {
    STREAMSPLAT_CHECK(i >= 0 && i < map.size(), InvalidArgument, "sample_point: pixel out of range");
    const double x = i % map.width + offset.x();
    const double y = i / map.width + offset.y();
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    if (x0 < 0 || y0 < 0 || x0 + 1 >= map.width || y0 + 1 >= map.height) {
        return map.point(i);
    }
    const double fx = x - x0;
    const double fy = y - y0;
    const int c = y0 * map.width + x0;
    const Vec3d p = (1.0 - fy) * ((1.0 - fx) * map.point(c) + fx * map.point(c + 1)) +
                    fy * ((1.0 - fx) * map.point(c + map.width) + fx * map.point(c + map.width + 1));
    return p.allFinite() ? p : map.point(i);
}

Registration residual_transform(const MatchSet &matches, const PointMap &prev_self, const PointMap &cur_cross,
                                const std::vector<Eigen::Vector2d> &offsets) {
    STREAMSPLAT_CHECK(matches.size() >= 4, InvalidArgument, "residual_transform needs at least 4 matches");
    STREAMSPLAT_CHECK(offsets.empty() || offsets.size() == matches.size(), InvalidArgument,
                      "residual_transform: one offset per match");
    const int n = static_cast<int>(matches.size());
    PointGrid src(n, 3);
    PointGrid dst(n, 3);
    Eigen::VectorXd w(n);
    for (int k = 0; k < n; ++k) {
        const auto [i, j] = matches.pairs[k];
        STREAMSPLAT_CHECK(i >= 0 && i < prev_self.size() && j >= 0 && j < cur_cross.size(), InvalidArgument,
                          "match index outside the point map");
        src.row(k) = cur_cross.points.row(j);
        dst.row(k) = matched_point(prev_self, i, offsets, k).transpose();
        w(k) = cur_cross.confidence(j) * prev_self.confidence(i);
    }
    return register_points(src, dst, w);
}

double match_residual_rms(const MatchSet &matches, const PointMap &prev_self, const PointMap &cur_cross,
                          const std::vector<Eigen::Vector2d> &offsets) {
    STREAMSPLAT_CHECK(offsets.empty() || offsets.size() == matches.size(), InvalidArgument,
                      "match_residual_rms: one offset per match");
    double sq = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < matches.size(); ++k) {
        const auto [i, j] = matches.pairs[k];
        STREAMSPLAT_CHECK(i >= 0 && i < prev_self.size() && j >= 0 && j < cur_cross.size(), InvalidArgument,
                          "match index outside the point map");
        const double w = cur_cross.confidence(j) * prev_self.confidence(i);
        const Vec3d e = cur_cross.point(j) - matched_point(prev_self, i, offsets, k);
        if (!e.allFinite()) {
            continue;
        }
        sq += w * e.squaredNorm();
        total += w;
    }
    STREAMSPLAT_CHECK(total > 0.0, InvalidArgument, "match_residual_rms: no weighted matches");
    return std::sqrt(sq / total);
}

PointMap apply_refinement(const PointMap &cur_cross, const Sim3d &delta) {
    PointMap out = cur_cross;
    if (delta.scale == 1.0 && delta.pose.rotation == Mat3d::Identity() && delta.pose.translation.isZero(0.0)) {
        return out;
    }
    for (int i = 0; i < out.size(); ++i) {
        out.points.row(i) = apply(delta, Vec3d(cur_cross.points.row(i).transpose())).transpose();
    }
    return out;
}

PnpResult refine_pose(const MatchSet &matches, const PointGrid &refined_world, int width, const Intrinsicsd &intr,
                      const RansacConfig &config) {
    STREAMSPLAT_CHECK(width > 0, InvalidArgument, "refine_pose: width must be positive");
    std::vector<Vec3d> points;
    std::vector<Vec2d> pixels;
    for (const auto &pair : matches.pairs) {
        const int j = pair.second;
        STREAMSPLAT_CHECK(j >= 0 && j < refined_world.rows(), InvalidArgument, "match index outside the point grid");
        if (!refined_world.row(j).allFinite()) {
            continue;
        }
        points.emplace_back(refined_world.row(j).transpose());
        pixels.emplace_back(j % width, j / width);
    }
    return pnp_ransac(points, pixels, intr, config);
}

GateDecision motion_gate(const Pose3d &prev_pose, const Pose3d &candidate, const std::vector<double> &history,
                         const GateConfig &config) {
    GateDecision d;
    d.rotation_deg = rotation_angle(prev_pose.rotation, candidate.rotation) * 180.0 / std::numbers::pi;
    d.translation = (candidate.center() - prev_pose.center()).norm();
    if (history.empty()) {
        return d;
    }
    const std::size_t take = std::min(history.size(), static_cast<std::size_t>(std::max(config.window, 1)));
    std::vector<double> recent(history.end() - static_cast<std::ptrdiff_t>(take), history.end());
    std::sort(recent.begin(), recent.end());
    d.median_translation = recent.size() % 2 == 1
                               ? recent[recent.size() / 2]
                               : 0.5 * (recent[recent.size() / 2 - 1] + recent[recent.size() / 2]);
    const bool rotation_ok = d.rotation_deg <= config.max_rotation_deg;
    // A stationary history gives no translation scale to compare against.
    const bool translation_ok =
        d.median_translation <= 1e-12 || d.translation <= config.translation_factor * d.median_translation;
    d.accepted = rotation_ok && translation_ok;
    return d;
}

std::string to_json_line(const RefinementReport &report) {
    nlohmann::ordered_json j;
    j["frame_id"] = report.frame_id;
    j["delta_rotation_deg"] = report.delta_rotation_deg;
    j["delta_translation"] = report.delta_translation;
    j["residual_before"] = report.residual_before;
    j["residual_after"] = report.residual_after;
    j["delta_applied"] = report.delta_applied;
    j["gate"] = report.accepted ? "accepted" : "rejected";
    j["inliers"] = report.inliers;
    return j.dump();
}

} // namespace streamsplat
