// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "random.hpp"
#include "streamsplat/errors.hpp"

namespace streamsplat::oracle {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kDeg = std::numbers::pi / 180.0;

enum Stream : std::int64_t {
    kSurfels = 1,
    kTerrain,
    kBasis,
    kTrajectory,
    kSelfNoise,
    kCrossNoise,
    kBias,
    kDescNoise,
    kDescOutlier,
    kPlant,
};

Vec3d light_direction() { return Vec3d(-0.3, -0.5, -1.0).normalized(); }

double shade(const Vec3d &normal) { return 0.55 + 0.45 * std::max(0.0, std::abs(normal.dot(light_direction()))); }

Vec3d random_unit(std::mt19937_64 &rng) {
    std::normal_distribution<double> g;
    Vec3d v;
    do {
        v = Vec3d(g(rng), g(rng), g(rng));
    } while (v.norm() < 1e-9);
    return v.normalized();
}

Eigen::VectorXd random_unit(std::mt19937_64 &rng, int dim) {
    std::normal_distribution<double> g;
    Eigen::VectorXd v(dim);
    do {
        for (int k = 0; k < dim; ++k) {
            v(k) = g(rng);
        }
    } while (v.norm() < 1e-9);
    return v / v.norm();
}

// Lognormal multiplier with E[m^2] = 1.
double noise_multiplier(std::mt19937_64 &rng) {
    constexpr double h = 0.5;
    std::normal_distribution<double> g;
    return std::exp(h * g(rng) - h * h);
}

std::vector<Wave> random_waves(std::mt19937_64 &rng, int count, double total_amplitude, double wavelength_lo,
                               double wavelength_hi) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<Wave> waves(count);
    for (auto &w : waves) {
        const double wavelength = wavelength_lo + (wavelength_hi - wavelength_lo) * u01(rng);
        const double dir = 2.0 * std::numbers::pi * u01(rng);
        const double k = 2.0 * std::numbers::pi / wavelength;
        w.kx = k * std::cos(dir);
        w.ky = k * std::sin(dir);
        w.phase = 2.0 * std::numbers::pi * u01(rng);
        w.amplitude = total_amplitude / count;
    }
    return waves;
}

struct Hit {
    double depth = 0.0;
    int id = -1;
    Vec3d normal = Vec3d::Zero();
};

std::optional<double> intersect_terrain(const Terrain &terrain, const Vec3d &c, const Vec3d &d) {
    if (d.z() <= 1e-9) {
        return std::nullopt;
    }
    const double relief = terrain.relief();
    if (relief == 0.0) {
        const double s = (terrain.base_depth - c.z()) / d.z();
        return s > 0.0 ? std::optional<double>(s) : std::nullopt;
    }
    auto g = [&](double s) {
        const Vec3d p = c + s * d;
        return p.z() - terrain.height(p.x(), p.y());
    };
    const double lo = std::max(0.0, (terrain.base_depth - relief - c.z()) / d.z());
    const double hi = (terrain.base_depth + relief - c.z()) / d.z();
    if (hi <= 0.0) {
        return std::nullopt;
    }
    constexpr int kScan = 32;
    double a = lo;
    double ga = g(a);
    if (ga >= 0.0) {
        return a > 0.0 ? std::optional<double>(a) : std::nullopt;
    }
    for (int k = 1; k <= kScan; ++k) {
        double b = lo + (hi - lo) * k / kScan;
        const double gb = g(b);
        if (gb >= 0.0) {
            for (int it = 0; it < 60; ++it) {
                const double m = 0.5 * (a + b);
                if (g(m) >= 0.0) {
                    b = m;
                } else {
                    a = m;
                }
            }
            return 0.5 * (a + b);
        }
        a = b;
    }
    return std::nullopt;
}

} // namespace

double Terrain::height(double x, double y) const {
    double z = base_depth;
    for (const auto &w : height_waves) {
        z += w.value(x, y);
    }
    return z;
}

Eigen::Vector2d Terrain::gradient(double x, double y) const {
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    for (const auto &w : height_waves) {
        const double c = w.amplitude * std::cos(w.kx * x + w.ky * y + w.phase);
        g += c * Eigen::Vector2d(w.kx, w.ky);
    }
    return g;
}

Vec3d Terrain::normal(double x, double y) const {
    const Eigen::Vector2d g = gradient(x, y);
    return Vec3d(g.x(), g.y(), -1.0).normalized();
}

Vec3d Terrain::albedo(double x, double y) const {
    Vec3d a;
    for (int c = 0; c < 3; ++c) {
        a(c) = albedo_mean;
        for (const auto &w : albedo_waves[c]) {
            a(c) += w.value(x, y);
        }
    }
    return a.cwiseMax(0.0).cwiseMin(1.0);
}

double Terrain::relief() const {
    double r = 0.0;
    for (const auto &w : height_waves) {
        r += std::abs(w.amplitude);
    }
    return r;
}

Eigen::VectorXd DescriptorBasis::describe(const Vec3d &p) const {
    if (!p.allFinite()) {
        return describe_infinity();
    }
    const int m = lifts();
    Eigen::VectorXd lifted(4 * m);
    for (int k = 0; k < m; ++k) {
        const Vec3d u = (p - centers[k]) / scales[k];
        const double n2 = u.squaredNorm();
        lifted.segment<3>(4 * k) = 2.0 * u / (n2 + 1.0);
        lifted(4 * k + 3) = (n2 - 1.0) / (n2 + 1.0);
    }
    return projection * lifted / std::sqrt(static_cast<double>(m));
}

Eigen::VectorXd DescriptorBasis::describe_infinity() const {
    const int m = lifts();
    Eigen::VectorXd lifted = Eigen::VectorXd::Zero(4 * m);
    for (int k = 0; k < m; ++k) {
        lifted(4 * k + 3) = 1.0;
    }
    return projection * lifted / std::sqrt(static_cast<double>(m));
}

double DescriptorBasis::distance(const Vec3d &p, const Vec3d &q) const {
    const bool pf = p.allFinite();
    const bool qf = q.allFinite();
    if (!pf && !qf) {
        return 0.0;
    }
    const int m = lifts();
    double sum = 0.0;
    for (int k = 0; k < m; ++k) {
        if (pf && qf) {
            const Vec3d u = (p - centers[k]) / scales[k];
            const Vec3d v = (q - centers[k]) / scales[k];
            sum += 2.0 * (u - v).squaredNorm() / ((1.0 + u.squaredNorm()) * (1.0 + v.squaredNorm()));
        } else {
            const Vec3d u = ((pf ? p : q) - centers[k]) / scales[k];
            sum += 2.0 / (1.0 + u.squaredNorm());
        }
    }
    return sum / m;
}

SyntheticScene generate_scene(std::uint64_t seed, const SceneConfig &config) {
    STREAMSPLAT_CHECK(config.descriptor_dim >= 4 && config.descriptor_dim % 4 == 0, InvalidArgument,
                      "descriptor_dim must be a positive multiple of 4");
    SyntheticScene scene;
    scene.seed = seed;
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    if (config.kind == SceneKind::Surfels) {
        if (!config.explicit_surfels.empty()) {
            scene.surfels = config.explicit_surfels;
            scene.bounds = config.surfel_box;
            for (const auto &s : scene.surfels) {
                scene.bounds.extend(s.position);
            }
        } else {
            STREAMSPLAT_CHECK(config.surfel_count >= 1, InvalidArgument, "surfel count must be at least 1");
            STREAMSPLAT_CHECK(!config.surfel_box.isEmpty(), InvalidArgument, "surfel box is empty");
            auto rng = detail::make_rng(seed, {kSurfels});
            scene.bounds = config.surfel_box;
            const Vec3d lo = config.surfel_box.min();
            const Vec3d extent = config.surfel_box.sizes();
            scene.surfels.resize(config.surfel_count);
            for (auto &s : scene.surfels) {
                for (int c = 0; c < 3; ++c) {
                    s.position(c) = std::min(lo(c) + extent(c) * u01(rng), config.surfel_box.max()(c));
                }
                const Vec3d tilt = random_unit(rng) * 0.5 * u01(rng);
                s.normal = Vec3d(tilt.x(), tilt.y(), -1.0).normalized();
                for (int c = 0; c < 3; ++c) {
                    s.albedo(c) = 0.1 + 0.8 * u01(rng);
                }
                s.radius = config.surfel_radius_min + (config.surfel_radius_max - config.surfel_radius_min) * u01(rng);
            }
        }
    } else {
        auto rng = detail::make_rng(seed, {kTerrain});
        Terrain t;
        t.base_depth = config.terrain_depth;
        if (config.terrain_relief > 0.0) {
            t.height_waves = random_waves(rng, 3, config.terrain_relief, 1.5, 2.5);
        }
        for (auto &channel : t.albedo_waves) {
            channel = random_waves(rng, 3, 0.33, 0.7 * config.albedo_wavelength, 1.5 * config.albedo_wavelength);
        }
        scene.terrain = t;
        const double r = t.relief();
        scene.bounds = Eigen::AlignedBox3d(Vec3d(-4.0, -4.0, t.base_depth - r), Vec3d(4.0, 4.0, t.base_depth + r));
    }

    auto rng = detail::make_rng(seed, {kBasis});
    const int m = config.descriptor_dim / 4;
    const Vec3d center = scene.bounds.center();
    Vec3d spread = 0.5 * scene.bounds.sizes();
    double scale_lo = 0.25 * scene.bounds.diagonal().norm();
    if (scene.terrain) {
        spread = Vec3d(2.5, 2.5, 0.5);
        scale_lo = 0.8;
    }
    scale_lo = std::max(scale_lo, 1e-3);
    for (int k = 0; k < m; ++k) {
        Vec3d c;
        for (int i = 0; i < 3; ++i) {
            c(i) = center(i) + spread(i) * (2.0 * u01(rng) - 1.0);
        }
        scene.descriptors.centers.push_back(c);
        const double frac = m > 1 ? static_cast<double>(k) / (m - 1) : 0.0;
        scene.descriptors.scales.push_back(scale_lo * std::pow(4.0, frac));
    }
    std::normal_distribution<double> g;
    Eigen::MatrixXd a(4 * m, 4 * m);
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) {
            a(i, j) = g(rng);
        }
    }
    scene.descriptors.projection = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
    return scene;
}

std::vector<Pose3d> generate_trajectory(std::uint64_t seed, const TrajectoryConfig &config,
                                        const Intrinsicsd &intr, double plane_depth) {
    STREAMSPLAT_CHECK(config.frames >= 1, InvalidArgument, "trajectory needs at least one frame");
    std::vector<Pose3d> poses(config.frames);
    if (config.kind == TrajectoryKind::PixelAligned) {
        STREAMSPLAT_CHECK(plane_depth > 0.0 && intr.focal > 0.0, InvalidArgument,
                          "pixel-aligned trajectory needs a positive plane depth and focal");
        const double step = config.pixel_step * plane_depth / intr.focal;
        for (int t = 0; t < config.frames; ++t) {
            poses[t].translation = Vec3d(-step * t, 0.0, 0.0);
        }
        return poses;
    }

    STREAMSPLAT_CHECK(config.max_translation >= 0.0 && config.max_rotation_deg >= 0.0 && config.smoothness >= 0.0,
                      InvalidArgument, "trajectory bounds must be non-negative");
    auto rng = detail::make_rng(seed, {kTrajectory});
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double two_pi = 2.0 * std::numbers::pi;
    const double heading0 = two_pi * u01(rng);
    const double turn = (u01(rng) < 0.5 ? -1.0 : 1.0) * 0.05;
    const double pz = two_pi * u01(rng);
    const Vec3d rot_phase(two_pi * u01(rng), two_pi * u01(rng), two_pi * u01(rng));
    const Vec3d rot_freq(0.21, 0.17, 0.13);
    const Vec3d rot_weight(1.0, 1.0, 0.5);

    std::vector<Vec3d> steps(config.frames, Vec3d::Zero());
    for (int t = 1; t < config.frames; ++t) {
        const double h = heading0 + turn * t;
        steps[t] = Vec3d(std::cos(h), std::sin(h), 0.15 * std::sin(0.3 * t + pz)).normalized();
    }
    double speed = 0.8 * config.max_translation;
    double max_second = 0.0;
    for (int t = 2; t < config.frames; ++t) {
        max_second = std::max(max_second, (steps[t] - steps[t - 1]).norm());
    }
    if (max_second * speed > 0.95 * config.smoothness) {
        speed = 0.95 * config.smoothness / max_second;
    }

    auto orientation = [&](double amplitude, int t) {
        Vec3d w;
        for (int i = 0; i < 3; ++i) {
            w(i) = rot_weight(i) * (std::sin(rot_freq(i) * t + rot_phase(i)) - std::sin(rot_phase(i)));
        }
        return exp_so3(Vec3d(amplitude * w));
    };
    const double target = 0.8 * config.max_rotation_deg * kDeg;
    double amplitude = target / rot_freq.cwiseProduct(rot_weight).norm();
    for (int iter = 0; iter < 20 && amplitude > 0.0; ++iter) {
        double worst = 0.0;
        for (int t = 1; t < config.frames; ++t) {
            worst = std::max(worst, rotation_angle(orientation(amplitude, t - 1), orientation(amplitude, t)));
        }
        if (worst <= target || worst == 0.0) {
            break;
        }
        amplitude *= 0.98 * target / worst;
    }

    Vec3d center = Vec3d::Zero();
    for (int t = 0; t < config.frames; ++t) {
        center += speed * steps[t];
        const Mat3d cam_to_world = orientation(amplitude, t);
        poses[t].rotation = cam_to_world.transpose();
        poses[t].translation = -(poses[t].rotation * center);
    }
    poses[0] = Pose3d::Identity();
    return poses;
}

GroundTruthView render_ground_truth(const SyntheticScene &scene, const CameraModel &camera,
                                    const Vec3d &background) {
    const auto &intr = camera.intrinsics;
    STREAMSPLAT_CHECK(intr.width > 0 && intr.height > 0 && intr.focal > 0.0, InvalidArgument,
                      "camera intrinsics are invalid");
    const int n = intr.width * intr.height;
    GroundTruthView view;
    view.image = Image(intr.height, intr.width);
    view.depth = Eigen::VectorXd::Zero(n);
    view.world_points = PointGrid::Constant(n, 3, kNaN);
    view.normals = PointGrid::Zero(n, 3);
    view.hit = Eigen::VectorXi::Constant(n, -1);

    const Mat3d cam_to_world = camera.pose.rotation.transpose();
    const Vec3d c = camera.pose.center();
    for (int y = 0; y < intr.height; ++y) {
        for (int x = 0; x < intr.width; ++x) {
            const int i = y * intr.width + x;
            const Vec3d dir_cam((x - intr.cx()) / intr.focal, (y - intr.cy()) / intr.focal, 1.0);
            const Vec3d d = cam_to_world * dir_cam;
            Hit best;
            best.depth = std::numeric_limits<double>::infinity();
            for (int k = 0; k < static_cast<int>(scene.surfels.size()); ++k) {
                const Surfel &s = scene.surfels[k];
                const double denom = s.normal.dot(d);
                if (std::abs(denom) < 1e-12) {
                    continue;
                }
                const double depth = s.normal.dot(s.position - c) / denom;
                if (!(depth > 0.0) || depth >= best.depth) {
                    continue;
                }
                if ((c + depth * d - s.position).squaredNorm() <= s.radius * s.radius) {
                    best = Hit{depth, k, s.normal};
                }
            }
            if (scene.terrain) {
                if (auto depth = intersect_terrain(*scene.terrain, c, d); depth && *depth < best.depth) {
                    const Vec3d p = c + *depth * d;
                    best = Hit{*depth, -2, scene.terrain->normal(p.x(), p.y())};
                }
            }
            if (best.id == -1) {
                view.image.rgb.row(i) = background.transpose();
                continue;
            }
            const Vec3d p = c + best.depth * d;
            const Vec3d albedo = best.id >= 0 ? scene.surfels[best.id].albedo : scene.terrain->albedo(p.x(), p.y());
            view.image.rgb.row(i) = (albedo * shade(best.normal)).cwiseMin(1.0).transpose();
            view.depth(i) = best.depth;
            view.world_points.row(i) = p.transpose();
            view.normals.row(i) = best.normal.transpose();
            view.hit(i) = best.id;
        }
    }
    return view;
}

Sim3d injected_bias(std::uint64_t seed, int frame_a, int frame_b, const CorruptionConfig &corruption) {
    Sim3d bias;
    if (frame_a == frame_b || (corruption.bias_rotation_deg == 0.0 && corruption.bias_translation == 0.0)) {
        return bias;
    }
    auto rng = detail::make_rng(seed, {kBias, frame_a, frame_b});
    const Vec3d axis = random_unit(rng);
    const Vec3d dir = random_unit(rng);
    bias.pose.rotation = exp_so3(Vec3d(axis * corruption.bias_rotation_deg * kDeg));
    bias.pose.translation = corruption.bias_translation * dir;
    return bias;
}

PointMapPair predict_pointmaps(const SyntheticScene &scene, const FrameView &a, const FrameView &b,
                               const CorruptionConfig &corruption) {
    STREAMSPLAT_CHECK(a.truth != nullptr && b.truth != nullptr, InvalidArgument, "frame views need ground truth");
    STREAMSPLAT_CHECK(corruption.point_noise >= 0.0, InvalidArgument, "point noise must be non-negative");
    const auto &ia = a.camera.intrinsics;
    const auto &ib = b.camera.intrinsics;
    STREAMSPLAT_CHECK(ia.width == ib.width && ia.height == ib.height, InvalidArgument,
                      "frames must share image dimensions");
    const int n = ia.width * ia.height;
    const double sigma = corruption.point_noise;
    const double fidelity = std::clamp(corruption.confidence_fidelity, 0.0, 1.0);

    auto corrupt = [&](PointMap &pm, std::mt19937_64 rng, const Eigen::VectorXd &depth) {
        std::normal_distribution<double> g;
        for (int i = 0; i < n; ++i) {
            // Draw for every pixel so the stream layout does not depend on validity.
            const double m = noise_multiplier(rng);
            const double m_conf = noise_multiplier(rng);
            const Vec3d e(g(rng), g(rng), g(rng));
            if (!pm.points.row(i).allFinite()) {
                pm.confidence(i) = 1.0;
                continue;
            }
            const double std_i = sigma * depth(i) * m;
            pm.points.row(i) += (std_i * e).transpose();
            const double sigma_eff = fidelity * sigma * m + (1.0 - fidelity) * sigma * m_conf;
            pm.confidence(i) = 1.0 + 1.0 / (sigma_eff + 1e-3);
        }
    };

    PointMapPair out;
    out.self = PointMap(a.frame_id, a.frame_id, ia.height, ia.width);
    Eigen::VectorXd self_depth = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        if (!a.truth->valid(i)) {
            out.self.points.row(i).setConstant(kNaN);
            continue;
        }
        const double z = a.truth->depth(i);
        const int x = i % ia.width;
        const int y = i / ia.width;
        out.self.points.row(i) = Vec3d((x - ia.cx()) * z / ia.focal, (y - ia.cy()) * z / ia.focal, z).transpose();
        self_depth(i) = z;
    }
    corrupt(out.self, detail::make_rng(scene.seed, {kSelfNoise, a.frame_id}), self_depth);

    const Sim3d bias = injected_bias(scene.seed, a.frame_id, b.frame_id, corruption);
    out.cross = PointMap(b.frame_id, a.frame_id, ia.height, ia.width);
    Eigen::VectorXd cross_depth = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        if (!b.truth->valid(i)) {
            out.cross.points.row(i).setConstant(kNaN);
            continue;
        }
        const Vec3d pa = apply(a.camera.pose, Vec3d(b.truth->world_points.row(i).transpose()));
        cross_depth(i) = std::abs(pa.z());
        out.cross.points.row(i) = apply(bias, pa).transpose();
    }
    corrupt(out.cross, detail::make_rng(scene.seed, {kCrossNoise, a.frame_id, b.frame_id}), cross_depth);
    return out;
}

DescriptorMap predict_descriptors(const SyntheticScene &scene, const FrameView &frame,
                                  const CorruptionConfig &corruption, bool featureless) {
    STREAMSPLAT_CHECK(frame.truth != nullptr, InvalidArgument, "frame view needs ground truth");
    STREAMSPLAT_CHECK(corruption.outlier_fraction >= 0.0 && corruption.outlier_fraction < 1.0, InvalidArgument,
                      "outlier fraction must lie in [0, 1)");
    STREAMSPLAT_CHECK(corruption.descriptor_noise >= 0.0, InvalidArgument, "descriptor noise must be non-negative");
    const auto &intr = frame.camera.intrinsics;
    DescriptorMap out;
    out.frame_id = frame.frame_id;
    out.height = intr.height;
    out.width = intr.width;
    const int n = out.size();
    const int d = scene.descriptors.dim();
    out.features.resize(n, d);
    const Eigen::VectorXd pole = scene.descriptors.describe_infinity();
    if (featureless) {
        out.features.rowwise() = pole.transpose();
        return out;
    }
    for (int i = 0; i < n; ++i) {
        const Vec3d p = frame.truth->world_points.row(i).transpose();
        if (frame.truth->valid(i)) {
            out.features.row(i) = scene.descriptors.describe(p).transpose();
        } else {
            out.features.row(i) = pole.transpose();
        }
    }
    if (corruption.descriptor_noise > 0.0) {
        auto rng = detail::make_rng(scene.seed, {kDescNoise, frame.frame_id});
        std::normal_distribution<double> g(0.0, corruption.descriptor_noise);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < d; ++k) {
                out.features(i, k) += g(rng);
            }
            out.features.row(i).normalize();
        }
    }
    if (corruption.outlier_fraction > 0.0) {
        auto rng = detail::make_rng(scene.seed, {kDescOutlier, frame.frame_id});
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) {
            order[i] = i;
        }
        std::shuffle(order.begin(), order.end(), rng);
        const int count = static_cast<int>(std::lround(corruption.outlier_fraction * n));
        for (int k = 0; k < count; ++k) {
            out.features.row(order[k]) = random_unit(rng, d).transpose();
        }
    }
    return out;
}

std::vector<std::pair<int, int>> ground_truth_correspondences(const SyntheticScene &scene,
                                                              const GroundTruthView &a,
                                                              const GroundTruthView &b) {
    const int na = static_cast<int>(a.world_points.rows());
    const int nb = static_cast<int>(b.world_points.rows());
    const auto &basis = scene.descriptors;
    std::vector<int> best_b(na, -1);
    std::vector<double> best_b_dist(na, std::numeric_limits<double>::infinity());
    std::vector<int> best_a(nb, -1);
    std::vector<double> best_a_dist(nb, std::numeric_limits<double>::infinity());
    for (int i = 0; i < na; ++i) {
        const Vec3d p = a.world_points.row(i).transpose();
        for (int j = 0; j < nb; ++j) {
            const double dist = basis.distance(p, Vec3d(b.world_points.row(j).transpose()));
            if (dist < best_b_dist[i]) {
                best_b_dist[i] = dist;
                best_b[i] = j;
            }
            if (dist < best_a_dist[j]) {
                best_a_dist[j] = dist;
                best_a[j] = i;
            }
        }
    }
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < na; ++i) {
        if (best_b[i] >= 0 && best_a[best_b[i]] == i) {
            out.emplace_back(i, best_b[i]);
        }
    }
    return out;
}

PlantedMatches plant_outlier_matches(const std::vector<std::pair<int, int>> &pairs, const GroundTruthView &a,
                                     const GroundTruthView &b, double fraction, double min_separation,
                                     std::uint64_t seed) {
    STREAMSPLAT_CHECK(fraction >= 0.0 && fraction < 1.0, InvalidArgument, "outlier fraction must lie in [0, 1)");
    PlantedMatches out;
    out.pairs = pairs;
    out.outlier.assign(pairs.size(), false);
    auto rng = detail::make_rng(seed, {kPlant});
    std::vector<int> order(pairs.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        order[k] = static_cast<int>(k);
    }
    std::shuffle(order.begin(), order.end(), rng);
    const auto count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(pairs.size())));
    order.resize(count);

    // Targets freed by the selected pairs are handed out again so that every
    // target stays used at most once.
    std::vector<int> pool;
    for (const int k : order) {
        pool.push_back(pairs[k].second);
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<bool> used(pool.size(), false);
    for (const int k : order) {
        const Vec3d pa = a.world_points.row(pairs[k].first).transpose();
        for (std::size_t c = 0; c < pool.size(); ++c) {
            if (used[c]) {
                continue;
            }
            const Vec3d pb = b.world_points.row(pool[c]).transpose();
            if (pa.allFinite() && pb.allFinite() && (pa - pb).norm() >= min_separation) {
                used[c] = true;
                out.pairs[k].second = pool[c];
                out.outlier[k] = true;
                break;
            }
        }
    }
    // Pairs left without a distant partner keep a free target from the pool.
    for (const int k : order) {
        if (out.outlier[k]) {
            continue;
        }
        for (std::size_t c = 0; c < pool.size(); ++c) {
            if (!used[c]) {
                used[c] = true;
                out.pairs[k].second = pool[c];
                const Vec3d pa = a.world_points.row(pairs[k].first).transpose();
                const Vec3d pb = b.world_points.row(pool[c]).transpose();
                out.outlier[k] = pool[c] != pairs[k].second && (pa - pb).norm() >= min_separation;
                break;
            }
        }
    }
    return out;
}

std::vector<bool> covisible_mask(const GroundTruthView &a, const CameraModel &camera_b,
                                 const GroundTruthView &b) {
    const int n = static_cast<int>(a.world_points.rows());
    const auto &intr = camera_b.intrinsics;
    std::vector<bool> mask(n, false);
    for (int i = 0; i < n; ++i) {
        if (!a.valid(i)) {
            continue;
        }
        const Vec3d p = a.world_points.row(i).transpose();
        const auto px = project(intr, camera_b.pose, p);
        if (!px) {
            continue;
        }
        const long x = std::lround(px->x());
        const long y = std::lround(px->y());
        if (x < 0 || y < 0 || x >= intr.width || y >= intr.height) {
            continue;
        }
        const int j = static_cast<int>(y * intr.width + x);
        if (!b.valid(j)) {
            continue;
        }
        const double z = apply(camera_b.pose, p).z();
        mask[i] = std::abs(z - b.depth(j)) <= 0.02 * z;
    }
    return mask;
}

double covisibility(const GroundTruthView &a, const CameraModel &camera_b, const GroundTruthView &b) {
    const auto mask = covisible_mask(a, camera_b, b);
    int valid = 0;
    int shared = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        valid += a.valid(static_cast<int>(i)) ? 1 : 0;
        shared += mask[i] ? 1 : 0;
    }
    return valid > 0 ? static_cast<double>(shared) / valid : 0.0;
}

SyntheticStream::SyntheticStream(StreamConfig config) : config_(std::move(config)) {
    STREAMSPLAT_CHECK(config_.width > 0 && config_.height > 0 && config_.focal > 0.0, InvalidArgument,
                      "stream needs positive image size and focal");
    scene_ = generate_scene(config_.seed, config_.scene);
    const double plane = scene_.terrain ? scene_.terrain->base_depth : scene_.bounds.center().z();
    poses_ = generate_trajectory(config_.seed, config_.trajectory, intrinsics(), plane);
    truth_.resize(poses_.size());
}

Intrinsicsd SyntheticStream::intrinsics() const { return Intrinsicsd{config_.focal, config_.width, config_.height}; }

CameraModel SyntheticStream::camera(int frame) const {
    STREAMSPLAT_CHECK(frame >= 0 && frame < frame_count(), InvalidArgument, "frame index out of range");
    return CameraModel{intrinsics(), poses_[frame]};
}

const GroundTruthView &SyntheticStream::truth(int frame) const {
    STREAMSPLAT_CHECK(frame >= 0 && frame < frame_count(), InvalidArgument, "frame index out of range");
    if (!truth_[frame]) {
        truth_[frame] = render_ground_truth(scene_, camera(frame));
    }
    return *truth_[frame];
}

bool SyntheticStream::is_blank(int frame) const {
    return std::find(config_.blank_frames.begin(), config_.blank_frames.end(), frame) != config_.blank_frames.end();
}

Image SyntheticStream::image(int frame) const {
    if (is_blank(frame)) {
        return Image(config_.height, config_.width, 0.0);
    }
    return truth(frame).image;
}

FrameView SyntheticStream::view(int frame) const { return FrameView{frame, camera(frame), &truth(frame)}; }

PointMapPair SyntheticStream::predict_pointmaps(int a, int b) const {
    return oracle::predict_pointmaps(scene_, view(a), view(b), config_.corruption);
}

DescriptorMap SyntheticStream::predict_descriptors(int frame) const {
    return oracle::predict_descriptors(scene_, view(frame), config_.corruption, is_blank(frame));
}

} // namespace streamsplat::oracle
