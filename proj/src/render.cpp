// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "streamsplat/errors.hpp"

namespace streamsplat {

namespace {

bool content_less(const GaussianPrimitive &a, const GaussianPrimitive &b) {
    auto cmp = [](auto &&x, auto &&y) -> int {
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            if (x(k) < y(k)) {
                return -1;
            }
            if (y(k) < x(k)) {
                return 1;
            }
        }
        return 0;
    };
    if (int c = cmp(a.mu, b.mu)) {
        return c < 0;
    }
    if (int c = cmp(a.q, b.q)) {
        return c < 0;
    }
    if (int c = cmp(a.scale, b.scale)) {
        return c < 0;
    }
    if (a.opacity != b.opacity) {
        return a.opacity < b.opacity;
    }
    return cmp(a.color, b.color) < 0;
}

// dL/dq for R(q) given dL/dR, q unit (w, x, y, z).
Eigen::Vector4d rotation_grad_to_quaternion(const Eigen::Vector4d &q, const Mat3d &g) {
    const double w = q(0), x = q(1), y = q(2), z = q(3);
    Eigen::Vector4d out;
    out(0) = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    out(1) = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                    w * g(2, 1) - 2.0 * x * g(2, 2));
    out(2) = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                    z * g(2, 1) - 2.0 * y * g(2, 2));
    out(3) = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) +
                    y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return out;
}

} // namespace

RenderResult render(const std::vector<GaussianPrimitive> &gaussians, const CameraModel &camera,
                    const RenderSettings &settings) {
    const auto &intr = camera.intrinsics;
    STREAMSPLAT_CHECK(intr.width > 0 && intr.height > 0 && intr.focal > 0.0, InvalidArgument,
                      "render: invalid camera");
    const int width = intr.width;
    const int height = intr.height;
    const double f = intr.focal;
    const Mat3d &rv = camera.pose.rotation;

    RenderResult out;
    out.input_count = static_cast<int>(gaussians.size());
    out.image = Image(height, width);
    out.alpha = Eigen::VectorXd::Zero(width * height);
    out.transmittance = Eigen::VectorXd::Ones(width * height);

    std::vector<ProjectedGaussian> proj;
    proj.reserve(gaussians.size());
    for (int n = 0; n < static_cast<int>(gaussians.size()); ++n) {
        const auto &g = gaussians[n];
        STREAMSPLAT_CHECK(g.mu.allFinite() && g.q.allFinite() && g.scale.allFinite() && std::isfinite(g.opacity) &&
                              g.color.allFinite(),
                          InvalidArgument, "render: non-finite Gaussian");
        ProjectedGaussian p;
        p.index = n;
        p.cam = apply(camera.pose, g.mu);
        if (!(p.cam.z() > settings.near_plane)) {
            continue;
        }
        p.q_norm = g.q.norm();
        STREAMSPLAT_CHECK(p.q_norm > 0.0, InvalidArgument, "render: zero quaternion");
        p.q_unit = g.q / p.q_norm;
        p.rotation = quaternion_to_rotation(p.q_unit);
        p.scale = g.scale;
        p.opacity = g.opacity;
        p.color = g.color;
        const double iz = 1.0 / p.cam.z();
        p.mean = Vec2d(intr.cx() + f * p.cam.x() * iz, intr.cy() + f * p.cam.y() * iz);
        p.jacobian << f * iz, 0.0, -f * p.cam.x() * iz * iz, 0.0, f * iz, -f * p.cam.y() * iz * iz;
        const Mat3d m = p.rotation * g.scale.asDiagonal();
        p.cov_cam = rv * (m * m.transpose()) * rv.transpose();
        Eigen::Matrix2d cov2d = p.jacobian * p.cov_cam * p.jacobian.transpose();
        cov2d(0, 0) += settings.low_pass;
        cov2d(1, 1) += settings.low_pass;
        const double det = cov2d.determinant();
        if (!(det > 0.0)) {
            continue;
        }
        p.conic << cov2d(1, 1) / det, -cov2d(0, 1) / det, -cov2d(1, 0) / det, cov2d(0, 0) / det;
        const double mid = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
        const double lambda = mid + std::sqrt(std::max(0.0, mid * mid - det));
        const double r = std::ceil(settings.cutoff_sigma * std::sqrt(lambda));
        p.x0 = std::max(0, static_cast<int>(std::floor(p.mean.x() - r)));
        p.x1 = std::min(width - 1, static_cast<int>(std::ceil(p.mean.x() + r)));
        p.y0 = std::max(0, static_cast<int>(std::floor(p.mean.y() - r)));
        p.y1 = std::min(height - 1, static_cast<int>(std::ceil(p.mean.y() + r)));
        if (p.x0 > p.x1 || p.y0 > p.y1 || !std::isfinite(p.mean.x()) || !std::isfinite(p.mean.y())) {
            continue;
        }
        proj.push_back(p);
    }
    std::stable_sort(proj.begin(), proj.end(), [&](const ProjectedGaussian &a, const ProjectedGaussian &b) {
        if (a.cam.z() != b.cam.z()) {
            return a.cam.z() < b.cam.z();
        }
        if (content_less(gaussians[a.index], gaussians[b.index])) {
            return true;
        }
        if (content_less(gaussians[b.index], gaussians[a.index])) {
            return false;
        }
        return a.index < b.index;
    });

    const int npix = width * height;
    std::vector<int> counts(npix + 1, 0);
    for (const auto &p : proj) {
        for (int y = p.y0; y <= p.y1; ++y) {
            for (int x = p.x0; x <= p.x1; ++x) {
                ++counts[y * width + x + 1];
            }
        }
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    out.offsets = counts;
    out.entries.resize(counts[npix]);
    std::vector<int> cursor(counts.begin(), counts.end() - 1);
    for (int k = 0; k < static_cast<int>(proj.size()); ++k) {
        const auto &p = proj[k];
        for (int y = p.y0; y <= p.y1; ++y) {
            for (int x = p.x0; x <= p.x1; ++x) {
                out.entries[cursor[y * width + x]++] = k;
            }
        }
    }

    out.visited.assign(npix, 0);
    const double cutoff2 = settings.cutoff_sigma * settings.cutoff_sigma;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const int pix = y * width + x;
            double t = 1.0;
            Vec3d c = Vec3d::Zero();
            int e = out.offsets[pix];
            for (; e < out.offsets[pix + 1]; ++e) {
                const auto &p = proj[out.entries[e]];
                const Vec2d d(x - p.mean.x(), y - p.mean.y());
                const double m2 = d.dot(p.conic * d);
                if (m2 > cutoff2) {
                    continue;
                }
                const double a = std::min(settings.max_alpha, p.opacity * std::exp(-0.5 * m2));
                c += p.color * (a * t);
                t *= 1.0 - a;
                if (t < settings.min_transmittance) {
                    ++e;
                    break;
                }
            }
            out.visited[pix] = e - out.offsets[pix];
            c += settings.background * t;
            out.image.rgb.row(pix) = c.transpose();
            out.transmittance(pix) = t;
            out.alpha(pix) = 1.0 - t;
        }
    }
    out.projected = std::move(proj);
    return out;
}

std::vector<GaussianGrad> render_backward(const RenderResult &forward, const PointGrid &grad_image,
                                          const CameraModel &camera, const RenderSettings &settings) {
    const auto &intr = camera.intrinsics;
    const int width = intr.width;
    const int height = intr.height;
    STREAMSPLAT_CHECK(grad_image.rows() == width * height, InvalidArgument, "render_backward: gradient size mismatch");
    const auto &proj = forward.projected;
    const int np = static_cast<int>(proj.size());
    std::vector<Vec2d> g_mean(np, Vec2d::Zero());
    std::vector<Eigen::Matrix2d> g_conic(np, Eigen::Matrix2d::Zero());
    std::vector<double> g_opacity(np, 0.0);
    std::vector<Vec3d> g_color(np, Vec3d::Zero());

    const double cutoff2 = settings.cutoff_sigma * settings.cutoff_sigma;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const int pix = y * width + x;
            const Vec3d gc = grad_image.row(pix).transpose();
            if (gc.isZero(0.0)) {
                continue;
            }
            double t = forward.transmittance(pix);
            double accum = t * settings.background.dot(gc);
            const int begin = forward.offsets[pix];
            for (int e = begin + forward.visited[pix] - 1; e >= begin; --e) {
                const int k = forward.entries[e];
                const auto &p = proj[k];
                const Vec2d d(x - p.mean.x(), y - p.mean.y());
                const double m2 = d.dot(p.conic * d);
                if (m2 > cutoff2) {
                    continue;
                }
                const double gauss = std::exp(-0.5 * m2);
                const double raw = p.opacity * gauss;
                const double a = std::min(settings.max_alpha, raw);
                const double t_i = t / (1.0 - a);
                const double cg = p.color.dot(gc);
                g_color[k] += gc * (a * t_i);
                const double g_a = t_i * cg - accum / (1.0 - a);
                accum += cg * a * t_i;
                t = t_i;
                if (raw >= settings.max_alpha) {
                    continue;
                }
                g_opacity[k] += g_a * gauss;
                const double g_power = g_a * a;
                g_mean[k] += g_power * (p.conic * d);
                g_conic[k] += -0.5 * g_power * (d * d.transpose());
            }
        }
    }

    std::vector<GaussianGrad> grads(forward.input_count);
    const Mat3d &rv = camera.pose.rotation;
    const double f = intr.focal;
    for (int k = 0; k < np; ++k) {
        const auto &p = proj[k];
        GaussianGrad &g = grads[p.index];
        g.color = g_color[k];
        g.opacity = g_opacity[k];

        const Eigen::Matrix2d gcov2d = -p.conic * g_conic[k] * p.conic;
        const Mat3d g_cov_cam = p.jacobian.transpose() * gcov2d * p.jacobian;
        const Eigen::Matrix<double, 2, 3> g_jac = (gcov2d + gcov2d.transpose()) * p.jacobian * p.cov_cam;
        const Mat3d g_cov = rv.transpose() * g_cov_cam * rv;
        const Mat3d m = p.rotation * p.scale.asDiagonal();
        const Mat3d g_m = (g_cov + g_cov.transpose()) * m;
        const Mat3d g_rot = g_m * p.scale.asDiagonal();
        const Mat3d rtg = p.rotation.transpose() * g_m;
        g.scale = rtg.diagonal();
        const Eigen::Vector4d g_qu = rotation_grad_to_quaternion(p.q_unit, g_rot);
        g.q = (g_qu - p.q_unit * p.q_unit.dot(g_qu)) / p.q_norm;

        const double iz = 1.0 / p.cam.z();
        const double cx = p.cam.x();
        const double cy = p.cam.y();
        Vec3d g_cam = p.jacobian.transpose() * g_mean[k];
        g_cam.x() += g_jac(0, 2) * (-f * iz * iz);
        g_cam.y() += g_jac(1, 2) * (-f * iz * iz);
        g_cam.z() += g_jac(0, 0) * (-f * iz * iz) + g_jac(1, 1) * (-f * iz * iz) +
                     g_jac(0, 2) * (2.0 * f * cx * iz * iz * iz) + g_jac(1, 2) * (2.0 * f * cy * iz * iz * iz);
        g.mu = rv.transpose() * g_cam;
    }
    return grads;
}

} // namespace streamsplat
