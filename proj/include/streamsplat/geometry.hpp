// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>

#include "streamsplat/errors.hpp"

namespace streamsplat {

template <typename Scalar> using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar> using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar> using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar> using Quat = Eigen::Quaternion<Scalar>;

using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;
using Quatd = Quat<double>;

/// Rigid world-to-camera transform: p_cam = rotation * p_world + translation.
template <typename Scalar> struct Pose {
    Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
    Vec3<Scalar> translation = Vec3<Scalar>::Zero();

    static Pose Identity() { return Pose{}; }

    /// Camera center in world coordinates (for world-to-camera poses).
    Vec3<Scalar> center() const { return -rotation.transpose() * translation; }
};

/// Similarity transform applied as scale * rotation * p + translation.
template <typename Scalar> struct Sim3 {
    Scalar scale = Scalar(1);
    Pose<Scalar> pose;

    static Sim3 Identity() { return Sim3{}; }
};

using Pose3d = Pose<double>;
using Sim3d = Sim3<double>;

template <typename Scalar>
Vec3<Scalar> apply(const Pose<Scalar> &g, const Vec3<Scalar> &p) {
    return g.rotation * p + g.translation;
}

template <typename Scalar>
Vec3<Scalar> apply(const Sim3<Scalar> &g, const Vec3<Scalar> &p) {
    return g.scale * (g.pose.rotation * p) + g.pose.translation;
}

/// compose(a, b) applies b first, then a.
template <typename Scalar> Pose<Scalar> compose(const Pose<Scalar> &a, const Pose<Scalar> &b) {
    return Pose<Scalar>{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

template <typename Scalar> Sim3<Scalar> compose(const Sim3<Scalar> &a, const Sim3<Scalar> &b) {
    Sim3<Scalar> out;
    out.scale = a.scale * b.scale;
    out.pose.rotation = a.pose.rotation * b.pose.rotation;
    out.pose.translation = a.scale * (a.pose.rotation * b.pose.translation) + a.pose.translation;
    return out;
}

template <typename Scalar> Pose<Scalar> inverse(const Pose<Scalar> &g) {
    const Mat3<Scalar> rt = g.rotation.transpose();
    return Pose<Scalar>{rt, -(rt * g.translation)};
}

template <typename Scalar> Sim3<Scalar> inverse(const Sim3<Scalar> &g) {
    Sim3<Scalar> out;
    out.scale = Scalar(1) / g.scale;
    out.pose.rotation = g.pose.rotation.transpose();
    out.pose.translation = -(out.scale * (out.pose.rotation * g.pose.translation));
    return out;
}

template <typename Scalar> Sim3<Scalar> to_sim3(const Pose<Scalar> &g) {
    return Sim3<Scalar>{Scalar(1), g};
}

/// Nearest rotation in the Frobenius sense (polar factor with det = +1).
template <typename Scalar> Mat3<Scalar> orthonormalize(const Mat3<Scalar> &m) {
    Eigen::JacobiSVD<Mat3<Scalar>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3<Scalar> d = Mat3<Scalar>::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < Scalar(0)) {
        d(2, 2) = Scalar(-1);
    }
    return svd.matrixU() * d * svd.matrixV().transpose();
}

/// Geodesic angle between two rotations, radians.
template <typename Scalar> Scalar rotation_angle(const Mat3<Scalar> &a, const Mat3<Scalar> &b) {
    const Scalar c = ((a.transpose() * b).trace() - Scalar(1)) / Scalar(2);
    // acos loses precision near 0; use the atan2 form on the skew part.
    const Mat3<Scalar> r = a.transpose() * b;
    const Vec3<Scalar> w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    return std::atan2(w.norm() / Scalar(2), c);
}

template <typename Scalar> Mat3<Scalar> skew(const Vec3<Scalar> &v) {
    Mat3<Scalar> s;
    s << Scalar(0), -v.z(), v.y(), v.z(), Scalar(0), -v.x(), -v.y(), v.x(), Scalar(0);
    return s;
}

/// Rodrigues exponential map so(3) -> SO(3).
template <typename Scalar> Mat3<Scalar> exp_so3(const Vec3<Scalar> &w) {
    const Scalar theta = w.norm();
    if (theta < Scalar(1e-12)) {
        return Mat3<Scalar>::Identity() + skew(w);
    }
    return Eigen::AngleAxis<Scalar>(theta, w / theta).toRotationMatrix();
}

/// Accumulates a long chain of compositions, re-projecting the rotation onto
/// SO(3) every `period` steps so drift stays bounded.
template <typename Scalar> class PoseChain {
public:
    explicit PoseChain(Pose<Scalar> start = Pose<Scalar>::Identity(), int period = 64)
        : value_(start), period_(period) {}

    void push(const Pose<Scalar> &step) {
        value_ = compose(step, value_);
        if (++count_ % period_ == 0) {
            value_.rotation = orthonormalize(value_.rotation);
        }
    }

    const Pose<Scalar> &value() const { return value_; }
    int count() const { return count_; }

private:
    Pose<Scalar> value_;
    int period_;
    int count_ = 0;
};

/// Pinhole intrinsics with square pixels and the principal point at the image
/// center ((W-1)/2, (H-1)/2); pixel centers sit at integer coordinates.
template <typename Scalar> struct Intrinsics {
    Scalar focal = Scalar(1);
    int width = 0;
    int height = 0;

    Scalar cx() const { return Scalar(width - 1) / Scalar(2); }
    Scalar cy() const { return Scalar(height - 1) / Scalar(2); }
    Vec2<Scalar> principal_point() const { return Vec2<Scalar>(cx(), cy()); }
};

using Intrinsicsd = Intrinsics<double>;

/// Intrinsics plus world-to-camera pose (P = K [R | t]).
struct CameraModel {
    Intrinsicsd intrinsics;
    Pose3d pose;
};

/// Projects a world point; std::nullopt when the point is at or behind the
/// camera plane.
template <typename Scalar>
std::optional<Vec2<Scalar>> project(const Intrinsics<Scalar> &intr, const Pose<Scalar> &pose,
                                    const Vec3<Scalar> &p) {
    const Vec3<Scalar> pc = apply(pose, p);
    if (!(pc.z() > Scalar(0))) {
        return std::nullopt;
    }
    return Vec2<Scalar>(intr.cx() + intr.focal * pc.x() / pc.z(),
                        intr.cy() + intr.focal * pc.y() / pc.z());
}

template <typename Scalar>
Vec3<Scalar> unproject(const Intrinsics<Scalar> &intr, const Pose<Scalar> &pose,
                       const Vec2<Scalar> &pixel, Scalar depth) {
    STREAMSPLAT_CHECK(depth > Scalar(0), InvalidArgument, "unproject: depth must be positive");
    const Vec3<Scalar> pc((pixel.x() - intr.cx()) * depth / intr.focal,
                          (pixel.y() - intr.cy()) * depth / intr.focal, depth);
    return apply(inverse(pose), pc);
}

/// Quaternion (w, x, y, z) -> rotation matrix; the quaternion need not be
/// normalized.
template <typename Scalar> Mat3<Scalar> quaternion_to_rotation(const Eigen::Matrix<Scalar, 4, 1> &q) {
    return Quat<Scalar>(q(0), q(1), q(2), q(3)).normalized().toRotationMatrix();
}

template <typename Scalar> Eigen::Matrix<Scalar, 4, 1> rotation_to_quaternion(const Mat3<Scalar> &r) {
    Quat<Scalar> q(r);
    q.normalize();
    if (q.w() < Scalar(0)) {
        q.coeffs() = -q.coeffs();
    }
    return Eigen::Matrix<Scalar, 4, 1>(q.w(), q.x(), q.y(), q.z());
}

} // namespace streamsplat
