// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "streamsplat/decoder.hpp"
#include "streamsplat/matching.hpp"
#include "streamsplat/refinement.hpp"
#include "streamsplat/render.hpp"
#include "streamsplat/solver.hpp"
#include "streamsplat/stream.hpp"
#include "streamsplat/training.hpp"

namespace streamsplat {

enum class AblationMode { None, NoRefine, NoMerge, No2dFeatures };

const char *to_string(AblationMode mode);
AblationMode parse_ablation_mode(const std::string &text);

struct PipelineConfig {
    bool refine = true;
    bool merge = true;
    /// Delta is applied only when it removes at least this fraction of the
    /// identity's match residual; below that the residual is attributed to
    /// the integer-pixel offset of the matches.
    double min_residual_reduction = 0.5;
    int window = 2; ///< frames per predictor call; only adjacent pairs are implemented
    MatchFilterConfig match_filter;
    RansacConfig ransac;
    GateConfig gate;
    bool record_training_pairs = false;
};

struct GaussianRecord {
    GaussianPrimitive gaussian;
    int frame_id = 0; ///< frame that last wrote the primitive
    int pixel = 0;
    bool merged = false;
};

struct FrameStats {
    int frame_id = 0;
    bool processed = false;
    std::string skip_reason;
    int valid_pixels = 0;
    int raw_matches = 0;
    int inlier_matches = 0;
    int extended_matches = 0;
    int merged = 0;
    int new_gaussians = 0;
    double compression_ratio = 1.0; ///< valid pixels / new primitives
    bool refined = false;
    GateDecision gate;
    RefinementReport report;
    Pose3d coarse_pose;
    Pose3d pose;
    double seconds = 0.0;
};

/// State carried from the last processed frame to the next.
struct FrameCache {
    int frame_id = -1;
    Image image;
    PointMap self; ///< X^{t|t}, reused as the previous self map
    DescriptorMap descriptors;
    FeatureMap features;
    PointGrid centers; ///< world frame
    PointGrid local;   ///< own camera frame
    Eigen::VectorXd confidence;
    std::vector<int> index; ///< pixel -> gaussian record, -1 if none
};

struct SceneState {
    Intrinsicsd intrinsics;
    std::vector<GaussianRecord> gaussians;
    std::map<int, Pose3d> poses;
    std::vector<FrameStats> stats;
    std::vector<std::string> log;
    std::vector<double> translation_history;
    std::vector<TrainingPair> training_pairs;
    std::optional<FrameCache> last;
};

/// Runs every stage for one frame. The first call initializes the state
/// (focal estimate, identity pose). Errors never escape: a failing frame is
/// logged and leaves the rest of the state untouched.
void process_frame(SceneState &state, const FrameSource &source, int frame_id, const GaussianModel &model,
                   const PipelineConfig &config);

SceneState run_pipeline(const FrameSource &source, const GaussianModel &model, const PipelineConfig &config);

std::vector<GaussianPrimitive> scene_gaussians(const SceneState &state);

/// Half the bounding-box diagonal of the finite points of a map.
double half_diagonal(const PointMap &pm);

/// Maps ground-truth world coordinates x to estimated world coordinates
/// s R x + t, fitted from per-frame poses (chordal mean rotation, then least
/// squares for scale and translation).
struct GaugeAlignment {
    Sim3d transform;
    double rotation_rms_deg = 0.0;
    double translation_rms = 0.0; ///< in ground-truth units
    double rotation_max_deg = 0.0;
    double translation_max = 0.0;
};

GaugeAlignment align_gauge(const std::map<int, Pose3d> &estimated, const std::map<int, Pose3d> &truth);

/// A ground-truth pose expressed in the estimated world frame.
Pose3d to_estimated_frame(const GaugeAlignment &gauge, const Pose3d &truth);

struct EvalView {
    int frame_id = 0;
    CameraModel camera;
    Image image;
};

struct ViewMetrics {
    int frame_id = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct CompressionRow {
    int frame_id = 0;
    int valid_pixels = 0;
    int merged = 0;
    int new_gaussians = 0;
    double ratio = 1.0;
};

struct EvalReport {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    std::vector<CompressionRow> compression;
    double mean_compression = 1.0; ///< over frames after the first
    int gaussian_count = 0;
};

EvalReport evaluate(const SceneState &state, const std::vector<EvalView> &views, const RenderSettings &settings = {});

/// Views at the estimated poses of processed frames; throws InvalidArgument
/// for a frame without a pose.
std::vector<EvalView> context_views(const SceneState &state, const FrameSource &source, const std::vector<int> &frames);

struct ExperimentConfig {
    PipelineConfig pipeline;
    DecoderConfig decoder;
    TrainConfig train;
    std::uint64_t model_seed = 1;
    bool derive_max_scale = true; ///< half the first frame's bounding-box diagonal
};

struct ExperimentResult {
    SceneState state;
    GaussianModel model;
    TrainResult training;
    LossTerms loss_before;
    LossTerms loss_after;
};

/// Untrained pass to collect training pairs, training, then a second pass
/// with the trained model. The ablation mode is applied to the configuration
/// first, so training sees the ablated pipeline too.
ExperimentResult run_experiment(const FrameSource &source, ExperimentConfig config,
                                AblationMode mode = AblationMode::None);

ExperimentConfig apply_ablation(ExperimentConfig config, AblationMode mode);

void write_poses_jsonl(const std::filesystem::path &path, const SceneState &state);
void write_stats_json(const std::filesystem::path &path, const SceneState &state);
void write_refinement_log(const std::filesystem::path &path, const SceneState &state);
std::string report_json(const EvalReport &report);
/// Frame / pixels / merged / new / ratio table.
std::string compression_table(const EvalReport &report);

} // namespace streamsplat
