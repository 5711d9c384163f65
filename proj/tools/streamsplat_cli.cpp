// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "streamsplat/config.hpp"
#include "streamsplat/errors.hpp"
#include "streamsplat/gaussian.hpp"
#include "streamsplat/image.hpp"
#include "streamsplat/pipeline.hpp"
#include "streamsplat/render.hpp"
#include "streamsplat/stream.hpp"
#include "streamsplat/training.hpp"

namespace fs = std::filesystem;
using namespace streamsplat;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kNumerical = 4 };

std::string read_text(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path);
    out << text;
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

RunConfig load_optional_config(const std::string &path) { return path.empty() ? RunConfig{} : load_config(path); }

nlohmann::ordered_json loss_json(const LossTerms &t) {
    return {{"total", t.total}, {"rendering", t.rendering}, {"perceptual", t.perceptual},
            {"reconstruction", t.reconstruction}};
}

std::map<int, Pose3d> truth_poses(const DirectorySource &source) {
    std::map<int, Pose3d> out;
    for (const auto &[f, r] : source.ground_truth()) {
        out[f] = r.pose;
    }
    return out;
}

/// Held-out views at ground-truth poses, mapped into the estimated frame by a
/// gauge fitted on the frames the run processed.
std::vector<EvalView> held_out_views(const SceneState &state, const DirectorySource &source,
                                     const std::vector<int> &frames, GaugeAlignment &gauge) {
    const auto truth = truth_poses(source);
    gauge = align_gauge(state.poses, truth);
    std::vector<EvalView> views;
    for (int f : frames) {
        const auto it = truth.find(f);
        if (it == truth.end()) {
            throw InvalidArgument("no ground-truth pose for view frame " + std::to_string(f));
        }
        views.push_back({f, CameraModel{state.intrinsics, to_estimated_frame(gauge, it->second)}, source.image(f)});
    }
    return views;
}

nlohmann::ordered_json metrics_json(const EvalReport &report, const GaugeAlignment &gauge) {
    nlohmann::ordered_json j;
    j["gauge"] = {{"scale", gauge.transform.scale},
                  {"rotation_rms_deg", gauge.rotation_rms_deg},
                  {"translation_rms", gauge.translation_rms}};
    j["report"] = nlohmann::ordered_json::parse(report_json(report));
    return j;
}

struct RunOutcome {
    EvalReport report;
    GaugeAlignment gauge;
};

RunOutcome run_into(const DirectorySource &source, const RunConfig &config, AblationMode mode, const fs::path &out) {
    fs::create_directories(out);
    write_text(out / "config.txt", dump_config(config));
    std::cerr << "[" << to_string(mode) << "] " << source.frame_ids().size() << " context frames, "
              << config.experiment.train.steps << " training steps\n";
    ExperimentResult result = run_experiment(source, config.experiment, mode);
    for (const auto &line : result.state.log) {
        std::cerr << "  " << line << '\n';
    }
    write_ply(out / "gaussians.ply", scene_gaussians(result.state));
    write_poses_jsonl(out / "poses.jsonl", result.state);
    write_stats_json(out / "stats.json", result.state);
    write_refinement_log(out / "refinement.jsonl", result.state);
    write_loss_csv(out / "loss.csv", result.training);
    write_checkpoint(out / "model.sgwt", result.model);

    RunOutcome outcome;
    const auto views = held_out_views(result.state, source, source.test_frames(), outcome.gauge);
    outcome.report = evaluate(result.state, views, config.experiment.train.render);
    auto j = metrics_json(outcome.report, outcome.gauge);
    j["mode"] = to_string(mode);
    j["loss_before"] = loss_json(result.loss_before);
    j["loss_after"] = loss_json(result.loss_after);
    write_text(out / "metrics.json", j.dump(2) + "\n");
    std::cerr << "  held-out PSNR " << std::fixed << std::setprecision(2) << outcome.report.mean_psnr << " dB, mean "
              << "compression " << outcome.report.mean_compression << ", " << outcome.report.gaussian_count
              << " gaussians\n";
    return outcome;
}

/// Rebuilds the parts of a SceneState a run directory records.
SceneState load_run(const fs::path &dir) {
    SceneState state;
    nlohmann::json stats;
    try {
        stats = nlohmann::json::parse(read_text(dir / "stats.json"));
        state.intrinsics.width = stats.at("width").get<int>();
        state.intrinsics.height = stats.at("height").get<int>();
        state.intrinsics.focal = stats.at("focal").get<double>();
        for (const auto &f : stats.at("frames")) {
            FrameStats s;
            s.frame_id = f.at("frame_id").get<int>();
            s.processed = f.at("processed").get<bool>();
            if (s.processed) {
                s.valid_pixels = f.at("valid_pixels").get<int>();
                s.merged = f.at("merged").get<int>();
                s.new_gaussians = f.at("new_gaussians").get<int>();
                s.compression_ratio = f.at("compression_ratio").get<double>();
            }
            state.stats.push_back(s);
        }
    } catch (const nlohmann::json::exception &e) {
        throw IoError((dir / "stats.json").string() + ": " + e.what());
    }
    for (const auto &r : read_pose_records(dir / "poses.jsonl")) {
        state.poses[r.frame_id] = r.pose;
    }
    for (const auto &g : read_ply(dir / "gaussians.ply")) {
        state.gaussians.push_back({g, 0, 0, false});
    }
    return state;
}

std::vector<int> parse_frame_list(const std::string &text) {
    std::vector<int> out;
    std::stringstream s(text);
    std::string item;
    while (std::getline(s, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (item.find_first_not_of(" \t", used) != std::string::npos) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception &) {
            throw ConfigError("views: cannot parse frame list '" + text + "'");
        }
    }
    return out;
}

int cmd_synth(const std::string &config_path, const fs::path &out) {
    const RunConfig config = load_optional_config(config_path);
    const oracle::SyntheticStream stream(config.stream);
    const auto context = context_frames(stream.frame_count(), config.context_ratio);
    write_stream_directory(out, stream, context);
    write_text(out / "config.txt", dump_config(config));
    std::cerr << "wrote " << stream.frame_count() << " frames (" << context.size() << " context) to " << out.string()
              << '\n';
    return kOk;
}

int cmd_run(const fs::path &stream_dir, const std::string &config_path, const fs::path &out) {
    const DirectorySource source(stream_dir);
    run_into(source, load_optional_config(config_path), AblationMode::None, out);
    return kOk;
}

int cmd_ablate(const std::string &mode_text, const fs::path &stream_dir, const std::string &config_path,
               const fs::path &out) {
    const AblationMode mode = parse_ablation_mode(mode_text);
    const DirectorySource source(stream_dir);
    const RunConfig config = load_optional_config(config_path);
    const RunOutcome full = run_into(source, config, AblationMode::None, out / "full");
    const RunOutcome ablated = run_into(source, config, mode, out / to_string(mode));
    nlohmann::ordered_json j;
    j["mode"] = to_string(mode);
    j["full_psnr"] = full.report.mean_psnr;
    j["ablated_psnr"] = ablated.report.mean_psnr;
    j["relative_psnr_drop"] = (full.report.mean_psnr - ablated.report.mean_psnr) / full.report.mean_psnr;
    j["full_ssim"] = full.report.mean_ssim;
    j["ablated_ssim"] = ablated.report.mean_ssim;
    j["full_compression"] = full.report.mean_compression;
    j["ablated_compression"] = ablated.report.mean_compression;
    write_text(out / "ablation.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << '\n';
    return kOk;
}

int cmd_render(const fs::path &scene, const fs::path &pose_path, const fs::path &out, const std::string &config_path,
               int width, int height) {
    const auto gaussians = read_ply(scene);
    nlohmann::json pose;
    try {
        pose = nlohmann::json::parse(read_text(pose_path));
    } catch (const nlohmann::json::exception &e) {
        throw IoError(pose_path.string() + ": " + e.what());
    }
    CameraModel camera;
    try {
        const auto &q = pose.at("quaternion");
        const auto &t = pose.at("translation");
        camera.pose.rotation = quaternion_to_rotation(Eigen::Vector4d(q.at(0).get<double>(), q.at(1).get<double>(),
                                                                      q.at(2).get<double>(), q.at(3).get<double>()));
        camera.pose.translation = Vec3d(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
        camera.intrinsics.focal = pose.at("focal").get<double>();
        camera.intrinsics.width = pose.value("width", width);
        camera.intrinsics.height = pose.value("height", height);
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(pose_path.string() + ": " + e.what());
    }
    if (camera.intrinsics.width <= 0 || camera.intrinsics.height <= 0 || !(camera.intrinsics.focal > 0.0)) {
        throw ConfigError("render: width, height and focal must be positive");
    }
    const RunConfig config = load_optional_config(config_path);
    write_ppm(out, render(gaussians, camera, config.experiment.train.render).image);
    return kOk;
}

int cmd_eval(const fs::path &scene_dir, const fs::path &protocol_path, const std::string &out) {
    const auto protocol = parse_key_values(read_text(protocol_path));
    for (const auto &[key, value] : protocol) {
        if (key != "stream" && key != "views") {
            throw ConfigError("protocol: unknown key '" + key + "'");
        }
    }
    const auto stream_it = protocol.find("stream");
    if (stream_it == protocol.end()) {
        throw ConfigError("protocol: missing key 'stream'");
    }
    fs::path stream_dir = stream_it->second;
    if (stream_dir.is_relative()) {
        stream_dir = protocol_path.parent_path() / stream_dir;
    }
    const DirectorySource source(stream_dir);
    const SceneState state = load_run(scene_dir);
    RenderSettings settings;
    if (fs::exists(scene_dir / "config.txt")) {
        settings = load_config(scene_dir / "config.txt").experiment.train.render;
    }

    const std::string views_spec = protocol.count("views") ? protocol.at("views") : "test";
    GaugeAlignment gauge = align_gauge(state.poses, truth_poses(source));
    std::vector<EvalView> views;
    if (views_spec == "context") {
        views = context_views(state, source, source.frame_ids());
    } else {
        const auto frames = views_spec == "test" ? source.test_frames() : parse_frame_list(views_spec);
        views = held_out_views(state, source, frames, gauge);
    }
    const EvalReport report = evaluate(state, views, settings);
    auto j = metrics_json(report, gauge);
    j["views"] = views_spec;
    const std::string text = j.dump(2) + "\n";
    if (!out.empty()) {
        write_text(out, text);
    }
    std::cout << text;
    std::cerr << compression_table(report);
    return kOk;
}

int cmd_report(const std::vector<std::string> &runs, const std::string &csv_path) {
    struct Row {
        std::string run;
        std::string mode;
        double psnr = 0.0;
        double ssim = 0.0;
        int gaussians = 0;
        double compression = 1.0;
    };
    std::vector<Row> rows;
    for (const auto &dir : runs) {
        const fs::path path = fs::path(dir) / "metrics.json";
        try {
            const auto j = nlohmann::json::parse(read_text(path));
            const auto &r = j.at("report");
            Row row;
            row.run = dir;
            row.mode = j.value("mode", "full");
            row.psnr = r.at("mean_psnr").is_number() ? r.at("mean_psnr").get<double>()
                                                     : std::numeric_limits<double>::infinity();
            row.ssim = r.at("mean_ssim").get<double>();
            row.gaussians = r.at("gaussians").get<int>();
            row.compression = r.at("mean_compression").get<double>();
            rows.push_back(row);
        } catch (const nlohmann::json::exception &e) {
            throw IoError(path.string() + ": " + e.what());
        }
    }
    const double base = rows.front().psnr;
    std::ostringstream text, csv;
    text << std::left << std::setw(32) << "run" << std::setw(16) << "mode" << std::setw(10) << "PSNR" << std::setw(9)
         << "SSIM" << std::setw(11) << "gaussians" << std::setw(12) << "compression" << "dPSNR%\n";
    csv << "run,mode,psnr,ssim,gaussians,compression,relative_psnr_change\n";
    text << std::fixed;
    for (const auto &r : rows) {
        const double change = 100.0 * (r.psnr - base) / base;
        text << std::setw(32) << r.run << std::setw(16) << r.mode << std::setprecision(2) << std::setw(10) << r.psnr
             << std::setprecision(4) << std::setw(9) << r.ssim << std::setw(11) << r.gaussians
             << std::setprecision(2) << std::setw(12) << r.compression << change << '\n';
        csv << r.run << ',' << r.mode << ',' << r.psnr << ',' << r.ssim << ',' << r.gaussians << ',' << r.compression
            << ',' << change << '\n';
    }
    std::cout << text.str();
    if (!csv_path.empty()) {
        write_text(csv_path, csv.str());
    }
    return kOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Streaming pose-free Gaussian splatting on synthetic streams"};
    app.require_subcommand(1);

    std::string config_path, out_dir, stream_dir;
    auto *synth = app.add_subcommand("synth", "Generate a synthetic stream directory");
    synth->add_option("--config", config_path, "Key/value configuration file")->check(CLI::ExistingFile);
    synth->add_option("--out", out_dir, "Output directory")->required();

    auto *run = app.add_subcommand("run", "Reconstruct, train and evaluate on a stream directory");
    run->add_option("--stream", stream_dir, "Stream directory from synth")->required()->check(CLI::ExistingDirectory);
    run->add_option("--config", config_path, "Key/value configuration file")->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory")->required();

    std::string scene, pose, out_file;
    int width = 64, height = 64;
    auto *rend = app.add_subcommand("render", "Render a PLY scene from one camera");
    rend->add_option("--scene", scene, "Gaussian PLY file")->required()->check(CLI::ExistingFile);
    rend->add_option("--pose", pose, "JSON camera: quaternion, translation, focal[, width, height]")
        ->required()
        ->check(CLI::ExistingFile);
    rend->add_option("--out", out_file, "Output PPM")->required();
    rend->add_option("--config", config_path, "Configuration with render.* keys")->check(CLI::ExistingFile);
    rend->add_option("--width", width, "Image width when the pose omits it");
    rend->add_option("--height", height, "Image height when the pose omits it");

    std::string scene_dir, protocol;
    auto *eval = app.add_subcommand("eval", "Evaluate a run directory against a protocol");
    eval->add_option("--scene-dir", scene_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--protocol", protocol, "Protocol file (stream = <dir>, views = test|context|i,j,...)")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--out", out_file, "Also write the metrics JSON here");

    std::string mode;
    auto *ablate = app.add_subcommand("ablate", "Run the full pipeline and one ablation on a stream");
    ablate->add_option("--mode", mode, "Ablation mode")
        ->required()
        ->check(CLI::IsMember({"no_refine", "no_merge", "no_2d_features"}));
    ablate->add_option("--stream", stream_dir, "Stream directory from synth")
        ->required()
        ->check(CLI::ExistingDirectory);
    ablate->add_option("--config", config_path, "Key/value configuration file")->check(CLI::ExistingFile);
    ablate->add_option("--out", out_dir, "Output directory")->required();

    std::vector<std::string> runs;
    std::string csv_path;
    auto *report = app.add_subcommand("report", "Compare run directories");
    report->add_option("--runs", runs, "Run directories; the first is the baseline")
        ->required()
        ->check(CLI::ExistingDirectory);
    report->add_option("--csv", csv_path, "Also write the table as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*synth) {
            return cmd_synth(config_path, out_dir);
        }
        if (*run) {
            return cmd_run(stream_dir, config_path, out_dir);
        }
        if (*rend) {
            return cmd_render(scene, pose, out_file, config_path, width, height);
        }
        if (*eval) {
            return cmd_eval(scene_dir, protocol, out_file);
        }
        if (*ablate) {
            return cmd_ablate(mode, stream_dir, config_path, out_dir);
        }
        if (*report) {
            return cmd_report(runs, csv_path);
        }
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const IoError &e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const NumericalError &e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const fs::filesystem_error &e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
