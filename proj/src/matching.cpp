// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/matching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "random.hpp"
#include "streamsplat/errors.hpp"
#include "streamsplat/solver.hpp"

namespace streamsplat {

void check_partial_bijection(const std::vector<std::pair<int, int>> &pairs, int size_a, int size_b) {
    std::vector<bool> seen_a(size_a, false);
    std::vector<bool> seen_b(size_b, false);
    for (const auto &[i, j] : pairs) {
        STREAMSPLAT_CHECK(i >= 0 && i < size_a && j >= 0 && j < size_b, InvalidArgument,
                          "match index out of range");
        STREAMSPLAT_CHECK(!seen_a[i] && !seen_b[j], InvalidArgument, "match set is not a partial bijection");
        seen_a[i] = true;
        seen_b[j] = true;
    }
}

std::vector<Eigen::Vector2d> subpixel_offsets(const MatchSet &matches, const DescriptorMap &a,
                                              const DescriptorMap &b) {
    STREAMSPLAT_CHECK(a.dim() == b.dim(), InvalidArgument, "subpixel_offsets: descriptor dimensions differ");
    std::vector<Eigen::Vector2d> out(matches.size(), Eigen::Vector2d::Zero());
    const int w = a.width;
    for (std::size_t k = 0; k < matches.size(); ++k) {
        const auto [i, j] = matches.pairs[k];
        STREAMSPLAT_CHECK(i >= 0 && i < a.size() && j >= 0 && j < b.size(), InvalidArgument,
                          "match index out of range");
        const int x = i % w;
        const int y = i / w;
        if (x < 1 || y < 1 || x + 1 >= w || y + 1 >= a.height) {
            continue;
        }
        Eigen::MatrixXd jac(a.dim(), 2);
        jac.col(0) = 0.5 * (a.features.row(i + 1) - a.features.row(i - 1)).transpose();
        jac.col(1) = 0.5 * (a.features.row(i + w) - a.features.row(i - w)).transpose();
        const Eigen::Matrix2d normal = jac.transpose() * jac;
        if (!(normal.determinant() > 1e-12 * normal.trace() * normal.trace())) {
            continue;
        }
        const Eigen::VectorXd r = (b.features.row(j) - a.features.row(i)).transpose();
        const Eigen::Vector2d d = normal.ldlt().solve(jac.transpose() * r);
        if (d.allFinite()) {
            out[k] = d.cwiseMax(-1.0).cwiseMin(1.0);
        }
    }
    return out;
}

MatchSet reciprocal_match(const DescriptorMap &a, const DescriptorMap &b) {
    STREAMSPLAT_CHECK(a.dim() == b.dim(), InvalidArgument, "descriptor dimensions differ");
    STREAMSPLAT_CHECK(a.features.rows() == a.size() && b.features.rows() == b.size(), InvalidArgument,
                      "descriptor map size mismatch");
    const int na = a.size();
    const int nb = b.size();
    const int d = a.dim();
    MatchSet out;
    out.frame_a = a.frame_id;
    out.frame_b = b.frame_id;
    if (na == 0 || nb == 0) {
        return out;
    }

    // b stored feature-major so the inner loop runs over candidates; every
    // dot product still accumulates features in order 0..d-1.
    const RowMatrixXd bt_rows = b.features.transpose();
    std::vector<double> dot(nb);
    std::vector<int> row_best(na, -1);
    std::vector<double> row_dist(na, std::numeric_limits<double>::infinity());
    std::vector<int> col_best(nb, -1);
    std::vector<double> col_dist(nb, std::numeric_limits<double>::infinity());
    for (int i = 0; i < na; ++i) {
        std::fill(dot.begin(), dot.end(), 0.0);
        for (int k = 0; k < d; ++k) {
            const double aik = a.features(i, k);
            const double *brow = bt_rows.data() + static_cast<std::ptrdiff_t>(k) * nb;
            for (int j = 0; j < nb; ++j) {
                dot[j] += aik * brow[j];
            }
        }
        for (int j = 0; j < nb; ++j) {
            const double dist = 1.0 - dot[j];
            if (dist < row_dist[i]) {
                row_dist[i] = dist;
                row_best[i] = j;
            }
            if (dist < col_dist[j]) {
                col_dist[j] = dist;
                col_best[j] = i;
            }
        }
    }
    for (int i = 0; i < na; ++i) {
        const int j = row_best[i];
        if (j >= 0 && col_best[j] == i) {
            out.pairs.emplace_back(i, j);
            out.scores.push_back(1.0 - row_dist[i]);
        }
    }
    return out;
}

FilteredMatches filter_matches_ransac(const MatchSet &matches, const PointMap &pm_a, const PointMap &pm_b,
                                      const MatchFilterConfig &config) {
    const int n = static_cast<int>(matches.size());
    STREAMSPLAT_CHECK(n >= 4, InvalidArgument, "filter_matches_ransac needs at least 4 matches");
    STREAMSPLAT_CHECK(config.min_inliers >= 4, InvalidArgument, "min_inliers must be at least 4");
    PointGrid src(n, 3);
    PointGrid dst(n, 3);
    std::vector<double> depths;
    for (int k = 0; k < n; ++k) {
        const auto [i, j] = matches.pairs[k];
        STREAMSPLAT_CHECK(i >= 0 && i < pm_a.size() && j >= 0 && j < pm_b.size(), InvalidArgument,
                          "match index outside the point map");
        src.row(k) = pm_a.points.row(i);
        dst.row(k) = pm_b.points.row(j);
        if (dst.row(k).allFinite() && src.row(k).allFinite()) {
            depths.push_back(std::abs(dst(k, 2)));
        }
    }
    STREAMSPLAT_CHECK(depths.size() >= 4, NumericalError, "too few finite matched points");
    std::nth_element(depths.begin(), depths.begin() + depths.size() / 2, depths.end());
    FilteredMatches out;
    out.threshold = config.threshold_fraction * depths[depths.size() / 2];

    auto score = [&](const Sim3d &g, std::vector<bool> &mask, double &error_sum) {
        int count = 0;
        error_sum = 0.0;
        for (int k = 0; k < n; ++k) {
            const double e = (apply(g, Vec3d(src.row(k).transpose())) - dst.row(k).transpose()).norm();
            mask[k] = e < out.threshold;
            if (mask[k]) {
                ++count;
                error_sum += e;
            }
        }
        return count;
    };

    auto rng = detail::make_rng(config.seed, {0x4d4154});
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::vector<bool> mask(n);
    std::vector<bool> best_mask(n, false);
    int best_count = 0;
    double best_error = std::numeric_limits<double>::infinity();
    Sim3d best;
    double required = config.max_iterations;
    int it = 0;
    for (; it < config.max_iterations && it < required; ++it) {
        int sample[3];
        for (int k = 0; k < 3; ++k) {
            int c;
            do {
                c = pick(rng);
            } while (std::find(sample, sample + k, c) != sample + k);
            sample[k] = c;
        }
        PointGrid s(3, 3);
        PointGrid t(3, 3);
        for (int k = 0; k < 3; ++k) {
            s.row(k) = src.row(sample[k]);
            t.row(k) = dst.row(sample[k]);
        }
        Sim3d g;
        try {
            g = register_points(s, t, Eigen::VectorXd::Ones(3)).transform;
        } catch (const Error &) {
            continue;
        }
        double error_sum = 0.0;
        const int count = score(g, mask, error_sum);
        if (count > best_count || (count == best_count && count > 0 && error_sum < best_error)) {
            best_count = count;
            best_error = error_sum;
            best = g;
            best_mask = mask;
            const double miss = 1.0 - std::pow(static_cast<double>(count) / n, 3);
            required = miss <= 0.0 ? 0.0 : std::log(1.0 - config.confidence) / std::log(miss);
        }
    }
    out.iterations = it;
    STREAMSPLAT_CHECK(best_count >= config.min_inliers, NumericalError, "match RANSAC found no consensus");

    for (int round = 0; round < 3; ++round) {
        Eigen::VectorXd w(n);
        for (int k = 0; k < n; ++k) {
            w(k) = best_mask[k] ? 1.0 : 0.0;
        }
        Sim3d g;
        try {
            g = register_points(src, dst, w).transform;
        } catch (const Error &) {
            break;
        }
        double error_sum = 0.0;
        const int count = score(g, mask, error_sum);
        if (count < best_count) {
            break;
        }
        const bool same = mask == best_mask;
        best = g;
        best_mask = mask;
        best_count = count;
        if (same) {
            break;
        }
    }

    out.transform = best;
    out.inlier_mask = best_mask;
    out.inliers.frame_a = matches.frame_a;
    out.inliers.frame_b = matches.frame_b;
    for (int k = 0; k < n; ++k) {
        if (best_mask[k]) {
            out.inliers.pairs.push_back(matches.pairs[k]);
            if (k < static_cast<int>(matches.scores.size())) {
                out.inliers.scores.push_back(matches.scores[k]);
            }
        }
    }
    return out;
}

ExtendedMatchSet extend_matches(const MatchSet &matches, int height, int width) {
    STREAMSPLAT_CHECK(height > 0 && width > 0, InvalidArgument, "extend_matches: empty grid");
    const int n = height * width;
    check_partial_bijection(matches.pairs, n, n);
    ExtendedMatchSet out;
    std::vector<bool> target_used(n, false);
    std::vector<bool> source_used(n, false);
    for (const auto &[i, j] : matches.pairs) {
        out.pairs.emplace_back(i, j);
        out.dilated.push_back(false);
        target_used[i] = true;
        source_used[j] = true;
    }
    out.base_count = static_cast<int>(out.pairs.size());
    for (const auto &[i, j] : matches.pairs) {
        const int ix = i % width;
        const int iy = i / width;
        const int jx = j % width;
        const int jy = j / width;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0) {
                    continue;
                }
                const int tx = ix + dx;
                const int ty = iy + dy;
                const int sx = jx + dx;
                const int sy = jy + dy;
                if (tx < 0 || ty < 0 || tx >= width || ty >= height || sx < 0 || sy < 0 || sx >= width ||
                    sy >= height) {
                    continue;
                }
                const int ti = ty * width + tx;
                const int si = sy * width + sx;
                if (target_used[ti] || source_used[si]) {
                    continue;
                }
                target_used[ti] = true;
                source_used[si] = true;
                out.pairs.emplace_back(ti, si);
                out.dilated.push_back(true);
            }
        }
    }
    return out;
}

void write_matches_csv(const std::filesystem::path &path, const MatchSet &matches,
                       const std::vector<bool> &inlier_mask) {
    STREAMSPLAT_CHECK(inlier_mask.empty() || inlier_mask.size() == matches.size(), InvalidArgument,
                      "inlier mask size differs from the match count");
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << "i,j,score,inlier\n" << std::setprecision(17);
    for (std::size_t k = 0; k < matches.size(); ++k) {
        const double score = k < matches.scores.size() ? matches.scores[k] : 0.0;
        const bool inlier = inlier_mask.empty() || inlier_mask[k];
        out << matches.pairs[k].first << ',' << matches.pairs[k].second << ',' << score << ',' << (inlier ? 1 : 0)
            << '\n';
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

} // namespace streamsplat
