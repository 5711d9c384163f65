// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "streamsplat/descriptors.hpp"
#include "streamsplat/geometry.hpp"
#include "streamsplat/image.hpp"
#include "streamsplat/point_map.hpp"

// Synthetic stand-in for the frozen coarse point-map predictor and the
// matching head: ground-truth scenes, smooth trajectories, point maps with
// controlled corruption, and descriptor maps with known correspondences.
namespace streamsplat::oracle {

struct Surfel {
    Vec3d position = Vec3d::Zero();
    Vec3d normal = Vec3d(0, 0, -1);
    Vec3d albedo = Vec3d::Constant(0.5);
    double radius = 0.05;
};

/// One sinusoid a * sin(kx * x + ky * y + phase).
struct Wave {
    double amplitude = 0.0;
    double kx = 0.0;
    double ky = 0.0;
    double phase = 0.0;

    double value(double x, double y) const { return amplitude * std::sin(kx * x + ky * y + phase); }
};

/// Heightfield z = base_depth + sum(height_waves) in world coordinates with a
/// smooth albedo field; cameras look along +z.
struct Terrain {
    double base_depth = 3.0;
    std::vector<Wave> height_waves;
    std::vector<Wave> albedo_waves[3];
    double albedo_mean = 0.5;

    double height(double x, double y) const;
    Eigen::Vector2d gradient(double x, double y) const;
    Vec3d normal(double x, double y) const;
    Vec3d albedo(double x, double y) const;
    double relief() const; ///< sum of |amplitude|, bounds |height - base_depth|
};

enum class SceneKind { Terrain, Surfels };

struct SceneConfig {
    SceneKind kind = SceneKind::Terrain;
    int surfel_count = 2000;
    Eigen::AlignedBox3d surfel_box{Vec3d(-1, -1, 2), Vec3d(1, 1, 4)};
    double surfel_radius_min = 0.02;
    double surfel_radius_max = 0.08;
    /// When non-empty, used verbatim instead of random surfels.
    std::vector<Surfel> explicit_surfels;
    double terrain_depth = 3.0;
    double terrain_relief = 0.15;
    double albedo_wavelength = 1.2;
    int descriptor_dim = 24;
};

/// Geometry-derived descriptor basis: the descriptor of a world point is an
/// orthogonal projection of several inverse-stereographic lifts of the point,
/// which is exactly unit norm, so cosine distance between two descriptors is a
/// closed-form function of the two points.
struct DescriptorBasis {
    std::vector<Vec3d> centers;
    std::vector<double> scales;
    Eigen::MatrixXd projection; ///< d x (4 * lifts), orthonormal columns

    int dim() const { return static_cast<int>(projection.rows()); }
    int lifts() const { return static_cast<int>(centers.size()); }
    Eigen::VectorXd describe(const Vec3d &p) const;
    /// Descriptor of the point at infinity (every lift at its pole); used for
    /// pixels without a surface.
    Eigen::VectorXd describe_infinity() const;
    /// 1 - cos(describe(p), describe(q)) evaluated from the points directly.
    /// A non-finite point stands for the point at infinity.
    double distance(const Vec3d &p, const Vec3d &q) const;
};

struct SyntheticScene {
    std::uint64_t seed = 0;
    std::vector<Surfel> surfels;
    std::optional<Terrain> terrain;
    Eigen::AlignedBox3d bounds;
    DescriptorBasis descriptors;
};

SyntheticScene generate_scene(std::uint64_t seed, const SceneConfig &config);

enum class TrajectoryKind { Smooth, PixelAligned };

struct TrajectoryConfig {
    TrajectoryKind kind = TrajectoryKind::Smooth;
    int frames = 8;
    double max_rotation_deg = 1.0; ///< per frame
    double max_translation = 0.05; ///< per frame, scene units
    double smoothness = 0.02;      ///< bound on the second difference of camera centers
    int pixel_step = 2;            ///< PixelAligned: lateral shift in whole pixels per frame
};

/// Ground-truth world-to-camera poses; frame 0 is the identity.
std::vector<Pose3d> generate_trajectory(std::uint64_t seed, const TrajectoryConfig &config,
                                        const Intrinsicsd &intr, double plane_depth);

struct GroundTruthView {
    Image image;
    Eigen::VectorXd depth; ///< camera-frame z, 0 where nothing is hit
    PointGrid world_points; ///< NaN where nothing is hit
    PointGrid normals;
    Eigen::VectorXi hit; ///< surfel index, -2 for terrain, -1 for background

    bool valid(int i) const { return hit(i) != -1; }
};

GroundTruthView render_ground_truth(const SyntheticScene &scene, const CameraModel &camera,
                                    const Vec3d &background = Vec3d::Zero());

struct CorruptionConfig {
    double point_noise = 0.0; ///< per-axis std as a fraction of depth
    double bias_rotation_deg = 0.0;
    double bias_translation = 0.0;
    double confidence_fidelity = 1.0; ///< 1: confidence tracks the injected noise exactly
    double descriptor_noise = 0.0;
    double outlier_fraction = 0.0; ///< fraction of pixels with random descriptors
};

/// Output of the coarse predictor for the ordered pair (a, b), both maps in
/// camera a's coordinates.
struct PointMapPair {
    PointMap self;  ///< X^{a|a}, C^{a|a}
    PointMap cross; ///< X^{b|a}, C^{b|a}
};

struct FrameView {
    int frame_id = 0;
    CameraModel camera;
    const GroundTruthView *truth = nullptr;
};

/// The similarity bias injected into X^{b|a} (identity when no bias is set).
Sim3d injected_bias(std::uint64_t seed, int frame_a, int frame_b, const CorruptionConfig &corruption);

PointMapPair predict_pointmaps(const SyntheticScene &scene, const FrameView &a, const FrameView &b,
                               const CorruptionConfig &corruption);

/// `featureless` emits the same descriptor for every pixel (a blank frame).
DescriptorMap predict_descriptors(const SyntheticScene &scene, const FrameView &frame,
                                  const CorruptionConfig &corruption, bool featureless = false);

/// Ground-truth correspondences: mutual nearest neighbours between the
/// per-pixel surface points of the two frames under the descriptor distance,
/// computed from the 3D points alone (background pixels count as the point at
/// infinity). Ties go to the smaller pixel index.
std::vector<std::pair<int, int>> ground_truth_correspondences(const SyntheticScene &scene,
                                                              const GroundTruthView &a,
                                                              const GroundTruthView &b);

struct PlantedMatches {
    std::vector<std::pair<int, int>> pairs;
    std::vector<bool> outlier;
};

/// Re-pairs a `fraction` of the given correspondences among themselves so
/// that each planted pair joins surface points at least `min_separation`
/// apart. The result stays a partial bijection.
PlantedMatches plant_outlier_matches(const std::vector<std::pair<int, int>> &pairs, const GroundTruthView &a,
                                     const GroundTruthView &b, double fraction, double min_separation,
                                     std::uint64_t seed);

/// Pixels of `a` whose surface point is visible from `b` (in bounds and not
/// occluded).
std::vector<bool> covisible_mask(const GroundTruthView &a, const CameraModel &camera_b,
                                 const GroundTruthView &b);
double covisibility(const GroundTruthView &a, const CameraModel &camera_b, const GroundTruthView &b);

/// Full synthetic stream: scene, trajectory and cached ground-truth views.
struct StreamConfig {
    std::uint64_t seed = 7;
    int width = 64;
    int height = 64;
    double focal = 60.0;
    SceneConfig scene;
    TrajectoryConfig trajectory;
    CorruptionConfig corruption;
    std::vector<int> blank_frames; ///< frames rendered black and featureless
};

class SyntheticStream {
public:
    explicit SyntheticStream(StreamConfig config);

    const StreamConfig &config() const { return config_; }
    const SyntheticScene &scene() const { return scene_; }
    int frame_count() const { return static_cast<int>(poses_.size()); }
    Intrinsicsd intrinsics() const;
    CameraModel camera(int frame) const;
    const std::vector<Pose3d> &poses() const { return poses_; }
    const GroundTruthView &truth(int frame) const;
    Image image(int frame) const;
    bool is_blank(int frame) const;

    PointMapPair predict_pointmaps(int a, int b) const;
    DescriptorMap predict_descriptors(int frame) const;

private:
    FrameView view(int frame) const;

    StreamConfig config_;
    SyntheticScene scene_;
    std::vector<Pose3d> poses_;
    mutable std::vector<std::optional<GroundTruthView>> truth_;
};

} // namespace streamsplat::oracle
