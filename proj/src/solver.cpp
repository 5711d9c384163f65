// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "random.hpp"
#include "streamsplat/errors.hpp"

namespace streamsplat {

namespace {

constexpr double kWeiszfeldEps = 1e-9;
constexpr int kMaxFocalIterations = 50;
constexpr double kMinWeight = 1e-6;

double sample_cost(const Pose3d &pose, const std::vector<Vec3d> &points, const std::vector<Vec2d> &normalized) {
    double cost = 0.0;
    for (std::size_t k = 0; k < points.size(); ++k) {
        const Vec3d p = apply(pose, points[k]);
        if (!(p.z() > 1e-12)) {
            return std::numeric_limits<double>::infinity();
        }
        cost += (Vec2d(p.x() / p.z(), p.y() / p.z()) - normalized[k]).squaredNorm();
    }
    return cost;
}

Eigen::Matrix<double, 12, 1> null_vector(const Eigen::MatrixXd &a) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    return svd.matrixV().col(svd.matrixV().cols() - 1);
}

bool near_planar(const std::vector<Vec3d> &points, double ratio) {
    Vec3d mean = Vec3d::Zero();
    for (const auto &p : points) {
        mean += p;
    }
    mean /= static_cast<double>(points.size());
    Mat3d cov = Mat3d::Zero();
    for (const auto &p : points) {
        cov += (p - mean) * (p - mean).transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3d> eig(cov);
    return eig.eigenvalues()(0) <= ratio * eig.eigenvalues()(2);
}

// Pose from the plane-induced homography between plane coordinates and
// normalized image coordinates.
Pose3d pnp_planar(const std::vector<Vec3d> &points, const std::vector<Vec2d> &normalized) {
    const int n = static_cast<int>(points.size());
    Vec3d origin = Vec3d::Zero();
    for (const auto &p : points) {
        origin += p;
    }
    origin /= n;
    Mat3d cov = Mat3d::Zero();
    for (const auto &p : points) {
        cov += (p - origin) * (p - origin).transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3d> eig(cov);
    const Vec3d e3 = eig.eigenvectors().col(0);
    const Vec3d e1 = eig.eigenvectors().col(2);
    const Vec3d e2 = e3.cross(e1);
    Mat3d basis;
    basis << e1, e2, e3;

    std::vector<Vec2d> plane(n);
    double spread = 0.0;
    for (int k = 0; k < n; ++k) {
        plane[k] = Vec2d(e1.dot(points[k] - origin), e2.dot(points[k] - origin));
        spread += plane[k].norm();
    }
    spread /= n;
    STREAMSPLAT_CHECK(spread > 0.0, NumericalError, "planar PnP: coincident points");

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 9);
    for (int k = 0; k < n; ++k) {
        const double x = plane[k].x() / spread;
        const double y = plane[k].y() / spread;
        const double u = normalized[k].x();
        const double v = normalized[k].y();
        a.row(2 * k) << x, y, 1, 0, 0, 0, -u * x, -u * y, -u;
        a.row(2 * k + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y, -v;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Mat3d hm;
    hm << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    hm.col(0) /= spread;
    hm.col(1) /= spread;

    double depth_sum = 0.0;
    for (int k = 0; k < n; ++k) {
        depth_sum += (hm * Vec3d(plane[k].x(), plane[k].y(), 1.0)).z();
    }
    if (depth_sum < 0.0) {
        hm = -hm;
    }
    const double lambda = 0.5 * (hm.col(0).norm() + hm.col(1).norm());
    STREAMSPLAT_CHECK(lambda > 0.0, NumericalError, "planar PnP: degenerate homography");
    const Vec3d r1 = hm.col(0) / lambda;
    const Vec3d r2 = hm.col(1) / lambda;
    Mat3d rp;
    rp << r1, r2, r1.cross(r2);
    Pose3d pose;
    pose.rotation = orthonormalize(rp) * basis.transpose();
    pose.translation = hm.col(2) / lambda - pose.rotation * origin;
    return pose;
}

std::vector<Vec2d> to_normalized(const std::vector<Vec2d> &pixels, const Intrinsicsd &intr) {
    std::vector<Vec2d> out(pixels.size());
    for (std::size_t k = 0; k < pixels.size(); ++k) {
        out[k] = (pixels[k] - intr.principal_point()) / intr.focal;
    }
    return out;
}

double reprojection_px(const Pose3d &pose, const Vec3d &point, const Vec2d &pixel, const Intrinsicsd &intr) {
    const auto px = project(intr, pose, point);
    if (!px) {
        return std::numeric_limits<double>::infinity();
    }
    return (*px - pixel).norm();
}

} // namespace

FocalEstimate estimate_focal(const PointMap &pm) {
    STREAMSPLAT_CHECK(pm.points.rows() == pm.size(), InvalidArgument, "point map grid size mismatch");
    const Vec2d c((pm.width - 1) / 2.0, (pm.height - 1) / 2.0);
    std::vector<Vec2d> us;
    std::vector<Vec2d> vs;
    int finite = 0;
    for (int i = 0; i < pm.size(); ++i) {
        const Vec3d p = pm.point(i);
        if (!p.allFinite()) {
            continue;
        }
        ++finite;
        if (!(p.z() > 0.0)) {
            continue;
        }
        us.emplace_back(Vec2d(i % pm.width, i / pm.width) - c);
        vs.emplace_back(p.x() / p.z(), p.y() / p.z());
    }
    STREAMSPLAT_CHECK(!(finite >= 10 && us.empty()), NumericalError, "estimate_focal: all points behind the camera");
    STREAMSPLAT_CHECK(us.size() >= 10, NumericalError, "estimate_focal: fewer than 10 valid pixels");

    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < us.size(); ++k) {
        num += us[k].dot(vs[k]);
        den += vs[k].dot(vs[k]);
    }
    STREAMSPLAT_CHECK(den > 0.0 && num > 0.0, NumericalError, "estimate_focal: degenerate point map");

    FocalEstimate est;
    est.valid_pixels = static_cast<int>(us.size());
    double f = num / den;
    for (int it = 1; it <= kMaxFocalIterations; ++it) {
        num = 0.0;
        den = 0.0;
        for (std::size_t k = 0; k < us.size(); ++k) {
            const double w = 1.0 / std::max(kWeiszfeldEps, (us[k] - f * vs[k]).norm());
            num += w * us[k].dot(vs[k]);
            den += w * vs[k].dot(vs[k]);
        }
        const double next = num / den;
        STREAMSPLAT_CHECK(std::isfinite(next) && next > 0.0, NumericalError, "estimate_focal: iteration diverged");
        const double change = std::abs(next - f) / next;
        f = next;
        est.iterations = it;
        if (change < 1e-8) {
            est.converged = true;
            break;
        }
    }
    est.focal = f;
    for (std::size_t k = 0; k < us.size(); ++k) {
        const double r = (us[k] - f * vs[k]).norm();
        est.mean_residual += r;
        est.max_residual = std::max(est.max_residual, r);
    }
    est.mean_residual /= static_cast<double>(us.size());
    return est;
}

Registration register_points(const PointGrid &src, const PointGrid &dst, const Eigen::VectorXd &weights) {
    STREAMSPLAT_CHECK(src.rows() == dst.rows() && src.rows() == weights.size(), InvalidArgument,
                      "register_points: size mismatch");
    Registration reg;
    Vec3d mu_x = Vec3d::Zero();
    Vec3d mu_y = Vec3d::Zero();
    double total = 0.0;
    std::vector<int> used;
    for (int i = 0; i < src.rows(); ++i) {
        const double w = weights(i);
        if (!(w >= kMinWeight) || !std::isfinite(w) || !src.row(i).allFinite() || !dst.row(i).allFinite()) {
            continue;
        }
        used.push_back(i);
        total += w;
        mu_x += w * src.row(i).transpose();
        mu_y += w * dst.row(i).transpose();
    }
    STREAMSPLAT_CHECK(total > 0.0, NumericalError, "register_points: zero total weight");
    mu_x /= total;
    mu_y /= total;

    Mat3d cov_x = Mat3d::Zero();
    Mat3d cross = Mat3d::Zero();
    for (const int i : used) {
        const double w = weights(i) / total;
        const Vec3d x = src.row(i).transpose() - mu_x;
        const Vec3d y = dst.row(i).transpose() - mu_y;
        cov_x += w * x * x.transpose();
        cross += w * y * x.transpose();
    }
    const double var_x = cov_x.trace();
    Eigen::SelfAdjointEigenSolver<Mat3d> eig(cov_x);
    STREAMSPLAT_CHECK(var_x > 0.0 && eig.eigenvalues()(1) > 1e-12 * eig.eigenvalues()(2), NumericalError,
                      "register_points: degenerate source geometry (rank < 2)");

    Eigen::JacobiSVD<Mat3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec3d sign = Vec3d::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
        sign(2) = -1.0;
    }
    const Mat3d r = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
    const double s = svd.singularValues().dot(sign) / var_x;
    STREAMSPLAT_CHECK(s > 0.0 && std::isfinite(s), NumericalError, "register_points: non-positive scale");

    reg.transform.scale = s;
    reg.transform.pose.rotation = r;
    reg.transform.pose.translation = mu_y - s * (r * mu_x);
    reg.total_weight = total;
    reg.used_points = static_cast<int>(used.size());
    double sq = 0.0;
    for (const int i : used) {
        const Vec3d e = apply(reg.transform, Vec3d(src.row(i).transpose())) - dst.row(i).transpose();
        sq += weights(i) * e.squaredNorm();
    }
    reg.rms_residual = std::sqrt(sq / total);
    return reg;
}

Registration register_pointmaps(const PointMap &src, const PointMap &dst, const Eigen::VectorXd &weights) {
    STREAMSPLAT_CHECK(src.height == dst.height && src.width == dst.width, InvalidArgument,
                      "register_pointmaps: grid dimensions differ");
    return register_points(src.points, dst.points, weights);
}

Eigen::VectorXd confidence_weights(const PointMap &a, const PointMap &b) {
    STREAMSPLAT_CHECK(a.size() == b.size(), InvalidArgument, "confidence_weights: grid dimensions differ");
    return a.confidence.cwiseProduct(b.confidence);
}

Pose3d pnp_dlt(const std::vector<Vec3d> &points, const std::vector<Vec2d> &normalized) {
    STREAMSPLAT_CHECK(points.size() >= 6 && points.size() == normalized.size(), InvalidArgument,
                      "pnp_dlt needs at least 6 correspondences");
    const int n = static_cast<int>(points.size());
    Vec3d origin = Vec3d::Zero();
    for (const auto &p : points) {
        origin += p;
    }
    origin /= n;
    double spread = 0.0;
    for (const auto &p : points) {
        spread += (p - origin).norm();
    }
    spread /= n;
    STREAMSPLAT_CHECK(spread > 0.0, NumericalError, "pnp_dlt: coincident points");

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(std::max(2 * n, 12), 12);
    for (int k = 0; k < n; ++k) {
        const Vec3d x = (points[k] - origin) / spread;
        const double u = normalized[k].x();
        const double v = normalized[k].y();
        a.row(2 * k) << x.x(), x.y(), x.z(), 1, 0, 0, 0, 0, -u * x.x(), -u * x.y(), -u * x.z(), -u;
        a.row(2 * k + 1) << 0, 0, 0, 0, x.x(), x.y(), x.z(), 1, -v * x.x(), -v * x.y(), -v * x.z(), -v;
    }
    const Eigen::Matrix<double, 12, 1> p = null_vector(a);
    Eigen::Matrix<double, 3, 4> pm;
    pm << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), p(8), p(9), p(10), p(11);
    Mat3d m = pm.leftCols<3>();
    Vec3d p4 = pm.col(3);
    if (m.determinant() < 0.0) {
        m = -m;
        p4 = -p4;
    }
    Eigen::JacobiSVD<Mat3d> svd(m);
    const double k = svd.singularValues().mean();
    STREAMSPLAT_CHECK(k > 0.0, NumericalError, "pnp_dlt: degenerate projection");
    Pose3d pose;
    pose.rotation = orthonormalize(m);
    pose.translation = p4 * spread / k - pose.rotation * origin;
    return pose;
}

Pose3d refine_pose_gauss_newton(const Pose3d &initial, const std::vector<Vec3d> &points,
                                const std::vector<Vec2d> &normalized, int steps) {
    Pose3d pose = initial;
    double cost = sample_cost(pose, points, normalized);
    for (int step = 0; step < steps; ++step) {
        Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
        for (std::size_t k = 0; k < points.size(); ++k) {
            const Vec3d rx = pose.rotation * points[k];
            const Vec3d p = rx + pose.translation;
            if (!(p.z() > 1e-12)) {
                continue;
            }
            const double iz = 1.0 / p.z();
            Eigen::Matrix<double, 2, 3> dpi;
            dpi << iz, 0.0, -p.x() * iz * iz, 0.0, iz, -p.y() * iz * iz;
            Eigen::Matrix<double, 2, 6> j;
            j.leftCols<3>() = -dpi * skew(rx);
            j.rightCols<3>() = dpi;
            const Vec2d r = Vec2d(p.x() * iz, p.y() * iz) - normalized[k];
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        const Eigen::Matrix<double, 6, 1> delta = -h.ldlt().solve(g);
        if (!delta.allFinite()) {
            break;
        }
        Pose3d next;
        next.rotation = exp_so3(Vec3d(delta.head<3>())) * pose.rotation;
        next.translation = pose.translation + delta.tail<3>();
        const double next_cost = sample_cost(next, points, normalized);
        if (!(next_cost <= cost)) {
            break;
        }
        pose = next;
        const bool done = delta.norm() < 1e-15 || cost - next_cost <= 1e-30;
        cost = next_cost;
        if (done) {
            break;
        }
    }
    pose.rotation = orthonormalize(pose.rotation);
    return pose;
}

PnpResult pnp_ransac(const std::vector<Vec3d> &points, const std::vector<Vec2d> &pixels, const Intrinsicsd &intr,
                     const RansacConfig &config) {
    STREAMSPLAT_CHECK(points.size() == pixels.size(), InvalidArgument, "pnp_ransac: size mismatch");
    STREAMSPLAT_CHECK(points.size() >= 6, InvalidArgument, "pnp_ransac needs at least 6 correspondences");
    const int n = static_cast<int>(points.size());
    const std::vector<Vec2d> normalized = to_normalized(pixels, intr);

    auto score = [&](const Pose3d &pose, std::vector<bool> &mask, double &error_sum) {
        int count = 0;
        error_sum = 0.0;
        for (int k = 0; k < n; ++k) {
            const double e = reprojection_px(pose, points[k], pixels[k], intr);
            mask[k] = e < config.threshold_px;
            if (mask[k]) {
                ++count;
                error_sum += e;
            }
        }
        return count;
    };

    auto rng = detail::make_rng(config.seed, {0x504e50});
    std::uniform_int_distribution<int> pick(0, n - 1);
    PnpResult best;
    best.inliers.assign(n, false);
    double best_error = std::numeric_limits<double>::infinity();
    std::vector<bool> mask(n);
    double required = config.max_iterations;
    int it = 0;
    for (; it < config.max_iterations && it < required; ++it) {
        int sample[6];
        for (int k = 0; k < 6; ++k) {
            int c;
            do {
                c = pick(rng);
            } while (std::find(sample, sample + k, c) != sample + k);
            sample[k] = c;
        }
        std::vector<Vec3d> sp(6);
        std::vector<Vec2d> sn(6);
        for (int k = 0; k < 6; ++k) {
            sp[k] = points[sample[k]];
            sn[k] = normalized[sample[k]];
        }
        std::vector<Pose3d> candidates;
        try {
            candidates.push_back(refine_pose_gauss_newton(pnp_dlt(sp, sn), sp, sn, config.refine_steps));
        } catch (const Error &) {
        }
        if (near_planar(sp, 1e-2)) {
            try {
                candidates.push_back(refine_pose_gauss_newton(pnp_planar(sp, sn), sp, sn, config.refine_steps));
            } catch (const Error &) {
            }
        }
        if (candidates.size() == 2 && sample_cost(candidates[1], sp, sn) < sample_cost(candidates[0], sp, sn)) {
            std::swap(candidates[0], candidates[1]);
        }
        if (candidates.empty() || !candidates[0].rotation.allFinite() || !candidates[0].translation.allFinite()) {
            continue;
        }
        double error_sum = 0.0;
        const int count = score(candidates[0], mask, error_sum);
        if (count > best.inlier_count || (count == best.inlier_count && count > 0 && error_sum < best_error)) {
            best.inlier_count = count;
            best.pose = candidates[0];
            best.inliers = mask;
            best_error = error_sum;
            const double w = static_cast<double>(count) / n;
            const double miss = 1.0 - std::pow(w, 6);
            required = miss <= 0.0 ? 0.0 : std::log(1.0 - config.confidence) / std::log(miss);
        }
    }
    best.iterations = it;
    STREAMSPLAT_CHECK(best.inlier_count >= 6, NumericalError, "pnp_ransac: no model with at least 6 inliers");

    for (int round = 0; round < 2; ++round) {
        std::vector<Vec3d> ip;
        std::vector<Vec2d> in;
        for (int k = 0; k < n; ++k) {
            if (best.inliers[k]) {
                ip.push_back(points[k]);
                in.push_back(normalized[k]);
            }
        }
        const Pose3d refined = refine_pose_gauss_newton(best.pose, ip, in, config.refine_steps);
        double error_sum = 0.0;
        const int count = score(refined, mask, error_sum);
        if (count < best.inlier_count) {
            break;
        }
        best.pose = refined;
        best.inliers = mask;
        best.inlier_count = count;
    }
    double sq = 0.0;
    for (int k = 0; k < n; ++k) {
        if (best.inliers[k]) {
            const double e = reprojection_px(best.pose, points[k], pixels[k], intr);
            sq += e * e;
        }
    }
    best.rms_reprojection = std::sqrt(sq / best.inlier_count);
    return best;
}

} // namespace streamsplat
