// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "random.hpp"
#include "streamsplat/errors.hpp"
#include "streamsplat/metrics.hpp"

namespace streamsplat {

namespace {

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

PointGrid transform_points(const Pose3d &pose, const PointGrid &points) {
    PointGrid out(points.rows(), 3);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        out.row(i) = apply(pose, Vec3d(points.row(i).transpose())).transpose();
    }
    return out;
}

int count_valid(const PointGrid &points) {
    int n = 0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        n += points.row(i).allFinite() ? 1 : 0;
    }
    return n;
}

FeatureMap frame_features(const GaussianModel &model, const Image &image, const PointGrid &local,
                          const DescriptorMap &descriptors) {
    FeatureMap f2d;
    if (model.config().use_2d_features) {
        f2d = extract_2d_features(model, image);
    }
    return gaussian_features(model, model.config().use_2d_features ? &f2d : nullptr, local, descriptors);
}

void check_frame(const FrameSource &source, const Image &image, const DescriptorMap &desc) {
    STREAMSPLAT_CHECK(image.height == source.height() && image.width == source.width(), InvalidArgument,
                      "frame image has the wrong size");
    STREAMSPLAT_CHECK(desc.height == source.height() && desc.width == source.width(), InvalidArgument,
                      "descriptor map has the wrong size");
}

void process_first(SceneState &state, const FrameSource &source, int frame_id, const GaussianModel &model,
                   FrameStats &stats) {
    const auto pair = source.predict_pointmaps(frame_id, frame_id);
    validate(pair.self);
    const FocalEstimate focal = estimate_focal(pair.self);
    STREAMSPLAT_CHECK(focal.focal > 0.0 && std::isfinite(focal.focal), NumericalError, "focal estimate failed");
    Intrinsicsd intr{focal.focal, source.width(), source.height()};

    const Image image = source.image(frame_id);
    const DescriptorMap desc = source.predict_descriptors(frame_id);
    check_frame(source, image, desc);
    const PointGrid &centers = pair.self.points;
    const FeatureMap fgs = frame_features(model, image, centers, desc);
    const DecodedGaussians dec = decode_gaussians(model, fgs, centers);

    // Commit.
    state.intrinsics = intr;
    state.poses[frame_id] = Pose3d::Identity();
    FrameCache cache;
    cache.frame_id = frame_id;
    cache.image = image;
    cache.self = pair.self;
    cache.descriptors = desc;
    cache.features = fgs;
    cache.centers = centers;
    cache.local = centers;
    cache.confidence = pair.self.confidence;
    cache.index.assign(pair.self.size(), -1);
    for (int i = 0; i < pair.self.size(); ++i) {
        if (centers.row(i).allFinite()) {
            cache.index[i] = static_cast<int>(state.gaussians.size());
            state.gaussians.push_back({dec.gaussians[i], frame_id, i, false});
        }
    }
    state.last = std::move(cache);
    stats.processed = true;
    stats.valid_pixels = count_valid(centers);
    stats.new_gaussians = stats.valid_pixels;
    stats.compression_ratio = 1.0;
    stats.report.frame_id = frame_id;
}

void process_next(SceneState &state, const FrameSource &source, int frame_id, const GaussianModel &model,
                  const PipelineConfig &config, FrameStats &stats) {
    const FrameCache &prev = *state.last;
    const Pose3d prev_pose = state.poses.at(prev.frame_id);
    const Intrinsicsd &intr = state.intrinsics;
    const int n = prev.self.size();

    const auto fwd = source.predict_pointmaps(prev.frame_id, frame_id); // X^{p|p}, X^{c|p}
    const auto rev = source.predict_pointmaps(frame_id, prev.frame_id); // X^{c|c}, X^{p|c}
    validate(fwd.cross);
    validate(rev.self);
    validate(rev.cross);
    STREAMSPLAT_CHECK(fwd.cross.size() == n && rev.self.size() == n, InvalidArgument,
                      "point maps of a pair differ in size");

    // Coarse relative pose from registering the previous frame onto its view from the current camera.
    const Registration coarse_reg =
        register_pointmaps(prev.self, rev.cross, confidence_weights(prev.self, rev.cross));
    const Sim3d &s = coarse_reg.transform;
    const Pose3d relative{s.pose.rotation, s.pose.translation / s.scale};
    const Pose3d coarse = compose(relative, prev_pose);

    const Image image = source.image(frame_id);
    const DescriptorMap desc = source.predict_descriptors(frame_id);
    check_frame(source, image, desc);

    const MatchSet raw = reciprocal_match(prev.descriptors, desc);
    stats.raw_matches = static_cast<int>(raw.size());
    MatchSet inliers;
    inliers.frame_a = prev.frame_id;
    inliers.frame_b = frame_id;
    std::vector<std::string> notes;
    try {
        MatchFilterConfig mcfg = config.match_filter;
        mcfg.seed = detail::splitmix64(mcfg.seed ^ static_cast<std::uint64_t>(frame_id));
        inliers = filter_matches_ransac(raw, prev.self, fwd.cross, mcfg).inliers;
    } catch (const Error &e) {
        notes.push_back(std::string("matching fell back to no matches: ") + e.what());
    }
    stats.inlier_matches = static_cast<int>(inliers.size());

    PointMap refined = fwd.cross;
    Pose3d pose = coarse;
    RefinementReport report;
    report.frame_id = frame_id;
    GateDecision gate;
    bool refined_ok = false;
    if (config.refine && inliers.size() >= 6) {
        try {
            const auto offsets = subpixel_offsets(inliers, prev.descriptors, desc);
            const Registration delta = residual_transform(inliers, prev.self, fwd.cross, offsets);
            report.residual_before = match_residual_rms(inliers, prev.self, fwd.cross, offsets);
            report.residual_after = delta.rms_residual;
            report.delta_applied =
                delta.rms_residual <= (1.0 - config.min_residual_reduction) * report.residual_before;
            PointMap candidate_map = report.delta_applied ? apply_refinement(fwd.cross, delta.transform) : fwd.cross;
            RansacConfig rcfg = config.ransac;
            rcfg.seed = detail::splitmix64(rcfg.seed ^ static_cast<std::uint64_t>(frame_id));
            const PointGrid refined_world = transform_points(inverse(prev_pose), candidate_map.points);
            const PnpResult pnp = refine_pose(inliers, refined_world, source.width(), intr, rcfg);
            gate = motion_gate(prev_pose, pnp.pose, state.translation_history, config.gate);
            report.delta_rotation_deg = rotation_angle(Mat3d(Mat3d::Identity()), delta.transform.pose.rotation) *
                                        kRadToDeg;
            report.delta_translation = delta.transform.pose.translation.norm();
            report.inliers = pnp.inlier_count;
            report.accepted = gate.accepted;
            if (gate.accepted) {
                refined = std::move(candidate_map);
                pose = pnp.pose;
                refined_ok = true;
            } else {
                notes.push_back("motion gate rejected the refined pose; using the coarse estimate");
            }
        } catch (const Error &e) {
            report.accepted = false;
            notes.push_back(std::string("refinement failed, using the coarse estimate: ") + e.what());
        }
    } else {
        report.accepted = !config.refine;
    }

    const PointGrid centers = transform_points(inverse(prev_pose), refined.points);
    const PointGrid local = transform_points(pose, centers);
    const ExtendedMatchSet extended =
        config.merge ? extend_matches(inliers, source.height(), source.width()) : ExtendedMatchSet{};
    const FeatureMap fgs = frame_features(model, image, local, desc);
    const DecodedGaussians dec = decode_gaussians(model, fgs, centers);
    MergedGaussians merged;
    PointGrid merge_centers;
    if (!extended.pairs.empty()) {
        const FeatureMap warped = warp_features(fgs, prev.features, extended);
        merge_centers = merged_centers(prev.centers, prev.confidence, centers, refined.confidence, extended);
        merged = merge_gaussians(model, warped, prev.features, merge_centers, extended);
    }

    // Commit.
    FrameCache cache;
    cache.frame_id = frame_id;
    cache.index.assign(n, -1);
    for (const auto &[i, j] : extended.pairs) {
        const int target = prev.index[i];
        if (target < 0 || !centers.row(j).allFinite() || !merge_centers.row(i).allFinite()) {
            continue;
        }
        state.gaussians[target] = {merged.gaussians[i], frame_id, j, true};
        cache.index[j] = target;
        ++stats.merged;
    }
    for (int j = 0; j < n; ++j) {
        if (cache.index[j] < 0 && centers.row(j).allFinite()) {
            cache.index[j] = static_cast<int>(state.gaussians.size());
            state.gaussians.push_back({dec.gaussians[j], frame_id, j, false});
            ++stats.new_gaussians;
        }
    }
    if (config.record_training_pairs) {
        TrainingPair tp;
        tp.frame_prev = prev.frame_id;
        tp.frame_cur = frame_id;
        tp.image_prev = prev.image;
        tp.image_cur = image;
        tp.camera_prev = {intr, prev_pose};
        tp.camera_cur = {intr, pose};
        tp.centers_prev = prev.centers;
        tp.centers_cur = centers;
        tp.local_prev = prev.local;
        tp.local_cur = local;
        tp.confidence_prev = prev.confidence;
        tp.confidence_cur = refined.confidence;
        tp.descriptors_prev = prev.descriptors;
        tp.descriptors_cur = desc;
        tp.matches = extended;
        state.training_pairs.push_back(std::move(tp));
    }
    const double step = (pose.center() - prev_pose.center()).norm();
    state.translation_history.push_back(step);
    state.poses[frame_id] = pose;
    for (auto &note : notes) {
        state.log.push_back("frame " + std::to_string(frame_id) + ": " + note);
    }
    cache.image = image;
    cache.self = rev.self;
    cache.descriptors = desc;
    cache.features = fgs;
    cache.centers = centers;
    cache.local = local;
    cache.confidence = refined.confidence;
    state.last = std::move(cache);

    stats.processed = true;
    stats.valid_pixels = count_valid(centers);
    stats.extended_matches = static_cast<int>(extended.size());
    stats.compression_ratio =
        static_cast<double>(stats.valid_pixels) / static_cast<double>(std::max(stats.new_gaussians, 1));
    stats.refined = refined_ok;
    stats.gate = gate;
    stats.report = report;
    stats.coarse_pose = coarse;
    stats.pose = pose;
}

} // namespace

const char *to_string(AblationMode mode) {
    switch (mode) {
    case AblationMode::None:
        return "full";
    case AblationMode::NoRefine:
        return "no_refine";
    case AblationMode::NoMerge:
        return "no_merge";
    case AblationMode::No2dFeatures:
        return "no_2d_features";
    }
    return "full";
}

AblationMode parse_ablation_mode(const std::string &text) {
    for (AblationMode m :
         {AblationMode::None, AblationMode::NoRefine, AblationMode::NoMerge, AblationMode::No2dFeatures}) {
        if (text == to_string(m)) {
            return m;
        }
    }
    throw ConfigError("unknown ablation mode '" + text + "' (expected no_refine, no_merge or no_2d_features)");
}

void process_frame(SceneState &state, const FrameSource &source, int frame_id, const GaussianModel &model,
                   const PipelineConfig &config) {
    const auto start = std::chrono::steady_clock::now();
    FrameStats stats;
    stats.frame_id = frame_id;
    try {
        // Both paths compute every stage before touching the state.
        if (!state.last) {
            process_first(state, source, frame_id, model, stats);
        } else {
            process_next(state, source, frame_id, model, config, stats);
        }
    } catch (const std::exception &e) {
        stats = FrameStats{};
        stats.frame_id = frame_id;
        stats.skip_reason = e.what();
        state.log.push_back("frame " + std::to_string(frame_id) + " skipped: " + e.what());
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.stats.push_back(std::move(stats));
}

SceneState run_pipeline(const FrameSource &source, const GaussianModel &model, const PipelineConfig &config) {
    if (config.window != 2) {
        throw ConfigError("pipeline.window: only adjacent pairs (2) are supported");
    }
    SceneState state;
    for (int f : source.frame_ids()) {
        process_frame(state, source, f, model, config);
    }
    return state;
}

std::vector<GaussianPrimitive> scene_gaussians(const SceneState &state) {
    std::vector<GaussianPrimitive> out;
    out.reserve(state.gaussians.size());
    for (const auto &r : state.gaussians) {
        out.push_back(r.gaussian);
    }
    return out;
}

double half_diagonal(const PointMap &pm) {
    Eigen::AlignedBox3d box;
    for (int i = 0; i < pm.size(); ++i) {
        if (pm.points.row(i).allFinite()) {
            box.extend(Vec3d(pm.points.row(i).transpose()));
        }
    }
    STREAMSPLAT_CHECK(!box.isEmpty(), NumericalError, "point map has no finite points");
    return 0.5 * box.diagonal().norm();
}

GaugeAlignment align_gauge(const std::map<int, Pose3d> &estimated, const std::map<int, Pose3d> &truth) {
    std::vector<std::pair<Pose3d, Pose3d>> pairs;
    for (const auto &[f, p] : estimated) {
        const auto it = truth.find(f);
        if (it != truth.end()) {
            pairs.emplace_back(p, it->second);
        }
    }
    STREAMSPLAT_CHECK(!pairs.empty(), InvalidArgument, "align_gauge: no frame has both poses");
    Mat3d sum = Mat3d::Zero();
    for (const auto &[p, g] : pairs) {
        sum += p.rotation.transpose() * g.rotation;
    }
    GaugeAlignment out;
    const Mat3d r = orthonormalize(sum);
    out.transform.pose.rotation = r;

    // t_P = s t_G - R_P t for every frame, solved for (s, t).
    const int m = static_cast<int>(pairs.size());
    double spread = 0.0;
    for (const auto &pr : pairs) {
        spread += pr.second.translation.squaredNorm();
    }
    const bool fix_scale = spread < 1e-18;
    Eigen::MatrixXd a(3 * m, fix_scale ? 3 : 4);
    Eigen::VectorXd b(3 * m);
    for (int k = 0; k < m; ++k) {
        const auto &[p, g] = pairs[k];
        if (fix_scale) {
            a.block<3, 3>(3 * k, 0) = -p.rotation;
            b.segment<3>(3 * k) = p.translation - g.translation;
        } else {
            a.block<3, 1>(3 * k, 0) = g.translation;
            a.block<3, 3>(3 * k, 1) = -p.rotation;
            b.segment<3>(3 * k) = p.translation;
        }
    }
    const Eigen::VectorXd x = a.colPivHouseholderQr().solve(b);
    out.transform.scale = fix_scale ? 1.0 : x(0);
    out.transform.pose.translation = fix_scale ? Vec3d(x.head<3>()) : Vec3d(x.tail<3>());
    STREAMSPLAT_CHECK(out.transform.scale > 0.0 && std::isfinite(out.transform.scale), NumericalError,
                      "align_gauge: non-positive scale");

    double rot2 = 0.0, tr2 = 0.0;
    for (const auto &[p, g] : pairs) {
        const Pose3d expected = to_estimated_frame(out, g);
        const double rd = rotation_angle(p.rotation, expected.rotation) * kRadToDeg;
        const double td = (p.translation - expected.translation).norm() / out.transform.scale;
        rot2 += rd * rd;
        tr2 += td * td;
        out.rotation_max_deg = std::max(out.rotation_max_deg, rd);
        out.translation_max = std::max(out.translation_max, td);
    }
    out.rotation_rms_deg = std::sqrt(rot2 / m);
    out.translation_rms = std::sqrt(tr2 / m);
    return out;
}

Pose3d to_estimated_frame(const GaugeAlignment &gauge, const Pose3d &truth) {
    const Sim3d &g = gauge.transform;
    Pose3d out;
    out.rotation = truth.rotation * g.pose.rotation.transpose();
    out.translation = g.scale * truth.translation - out.rotation * g.pose.translation;
    return out;
}

EvalReport evaluate(const SceneState &state, const std::vector<EvalView> &views, const RenderSettings &settings) {
    EvalReport report;
    const auto gaussians = scene_gaussians(state);
    report.gaussian_count = static_cast<int>(gaussians.size());
    for (const auto &v : views) {
        const RenderResult r = render(gaussians, v.camera, settings);
        ViewMetrics m;
        m.frame_id = v.frame_id;
        m.psnr = psnr(v.image, r.image);
        m.ssim = ssim(v.image, r.image);
        report.views.push_back(m);
    }
    if (!report.views.empty()) {
        for (const auto &m : report.views) {
            report.mean_psnr += m.psnr;
            report.mean_ssim += m.ssim;
        }
        report.mean_psnr /= static_cast<double>(report.views.size());
        report.mean_ssim /= static_cast<double>(report.views.size());
    }
    double ratio_sum = 0.0;
    int ratio_count = 0;
    bool first = true;
    for (const auto &s : state.stats) {
        if (!s.processed) {
            continue;
        }
        report.compression.push_back({s.frame_id, s.valid_pixels, s.merged, s.new_gaussians, s.compression_ratio});
        if (!first) {
            ratio_sum += s.compression_ratio;
            ++ratio_count;
        }
        first = false;
    }
    report.mean_compression = ratio_count > 0 ? ratio_sum / ratio_count : 1.0;
    return report;
}

std::vector<EvalView> context_views(const SceneState &state, const FrameSource &source,
                                    const std::vector<int> &frames) {
    std::vector<EvalView> out;
    for (int f : frames) {
        const auto it = state.poses.find(f);
        STREAMSPLAT_CHECK(it != state.poses.end(), InvalidArgument,
                          "no pose for view frame " + std::to_string(f));
        out.push_back({f, CameraModel{state.intrinsics, it->second}, source.image(f)});
    }
    return out;
}

ExperimentConfig apply_ablation(ExperimentConfig config, AblationMode mode) {
    switch (mode) {
    case AblationMode::None:
        break;
    case AblationMode::NoRefine:
        config.pipeline.refine = false;
        break;
    case AblationMode::NoMerge:
        config.pipeline.merge = false;
        break;
    case AblationMode::No2dFeatures:
        config.decoder.use_2d_features = false;
        break;
    }
    return config;
}

ExperimentResult run_experiment(const FrameSource &source, ExperimentConfig config, AblationMode mode) {
    config = apply_ablation(config, mode);
    const auto frames = source.frame_ids();
    STREAMSPLAT_CHECK(!frames.empty(), InvalidArgument, "run_experiment: empty stream");
    if (config.derive_max_scale) {
        config.decoder.max_scale = half_diagonal(source.predict_pointmaps(frames[0], frames[0]).self);
    }
    ExperimentResult out;
    out.model = GaussianModel(config.decoder);
    out.model.initialize(config.model_seed);

    PipelineConfig collect = config.pipeline;
    collect.record_training_pairs = true;
    SceneState first = run_pipeline(source, out.model, collect);
    const std::vector<TrainingPair> pairs = std::move(first.training_pairs);
    if (!pairs.empty()) {
        out.loss_before = mean_loss(out.model, pairs, config.train.lambda, config.train.render);
        if (config.train.steps > 0) {
            out.training = train(out.model, pairs, config.train);
        }
        out.loss_after = mean_loss(out.model, pairs, config.train.lambda, config.train.render);
    }
    PipelineConfig final_cfg = config.pipeline;
    final_cfg.record_training_pairs = false;
    out.state = run_pipeline(source, out.model, final_cfg);
    return out;
}

void write_poses_jsonl(const std::filesystem::path &path, const SceneState &state) {
    std::vector<PoseRecord> records;
    for (const auto &[f, p] : state.poses) {
        records.push_back({f, p, state.intrinsics.focal});
    }
    write_pose_records(path, records);
}

void write_stats_json(const std::filesystem::path &path, const SceneState &state) {
    nlohmann::ordered_json j;
    j["focal"] = state.intrinsics.focal;
    j["width"] = state.intrinsics.width;
    j["height"] = state.intrinsics.height;
    j["gaussians"] = state.gaussians.size();
    auto frames = nlohmann::ordered_json::array();
    for (const auto &s : state.stats) {
        nlohmann::ordered_json f;
        f["frame_id"] = s.frame_id;
        f["processed"] = s.processed;
        if (!s.processed) {
            f["skip_reason"] = s.skip_reason;
            frames.push_back(f);
            continue;
        }
        f["valid_pixels"] = s.valid_pixels;
        f["raw_matches"] = s.raw_matches;
        f["inlier_matches"] = s.inlier_matches;
        f["extended_matches"] = s.extended_matches;
        f["merged"] = s.merged;
        f["new_gaussians"] = s.new_gaussians;
        f["compression_ratio"] = s.compression_ratio;
        f["refined"] = s.refined;
        f["gate"] = s.gate.accepted ? "accepted" : "rejected";
        frames.push_back(f);
    }
    j["frames"] = frames;
    auto log = nlohmann::ordered_json::array();
    for (const auto &line : state.log) {
        log.push_back(line);
    }
    j["log"] = log;
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

void write_refinement_log(const std::filesystem::path &path, const SceneState &state) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    bool first = true;
    for (const auto &s : state.stats) {
        if (!s.processed) {
            continue;
        }
        if (first) {
            first = false;
            continue;
        }
        out << to_json_line(s.report) << '\n';
    }
}

std::string report_json(const EvalReport &report) {
    auto num = [](double v) -> nlohmann::ordered_json {
        if (std::isfinite(v)) {
            return v;
        }
        return v > 0 ? "inf" : "-inf";
    };
    nlohmann::ordered_json j;
    auto views = nlohmann::ordered_json::array();
    for (const auto &v : report.views) {
        views.push_back({{"frame_id", v.frame_id}, {"psnr", num(v.psnr)}, {"ssim", v.ssim}});
    }
    j["views"] = views;
    j["mean_psnr"] = num(report.mean_psnr);
    j["mean_ssim"] = report.mean_ssim;
    j["gaussians"] = report.gaussian_count;
    j["mean_compression"] = report.mean_compression;
    auto rows = nlohmann::ordered_json::array();
    for (const auto &r : report.compression) {
        rows.push_back({{"frame_id", r.frame_id},
                        {"valid_pixels", r.valid_pixels},
                        {"merged", r.merged},
                        {"new_gaussians", r.new_gaussians},
                        {"ratio", r.ratio}});
    }
    j["compression"] = rows;
    return j.dump(2);
}

std::string compression_table(const EvalReport &report) {
    std::ostringstream out;
    out << std::left << std::setw(8) << "frame" << std::setw(10) << "pixels" << std::setw(10) << "merged"
        << std::setw(10) << "new" << "ratio\n";
    out << std::fixed << std::setprecision(2);
    for (const auto &r : report.compression) {
        out << std::setw(8) << r.frame_id << std::setw(10) << r.valid_pixels << std::setw(10) << r.merged
            << std::setw(10) << r.new_gaussians << r.ratio << '\n';
    }
    out << "mean ratio (frames after the first): " << report.mean_compression << '\n';
    return out.str();
}

} // namespace streamsplat
