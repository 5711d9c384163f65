// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "streamsplat/errors.hpp"

namespace streamsplat {

namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string &key, const std::string &v) {
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    return out;
}

template <typename Int> Int parse_int(const std::string &key, const std::string &v) {
    Int out{};
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string &key, const std::string &v) {
    if (v == "true" || v == "1" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "off") {
        return false;
    }
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

struct Binding {
    std::string key;
    std::function<void(const std::string &)> set;
    std::function<std::string()> get;
};

std::vector<Binding> bindings(RunConfig &c) {
    std::vector<Binding> b;
    auto real = [&b](const std::string &key, double &field) {
        b.push_back({key, [&field, key](const std::string &v) { field = parse_double(key, v); },
                     [&field] { return format_double(field); }});
    };
    auto integer = [&b](const std::string &key, int &field) {
        b.push_back({key, [&field, key](const std::string &v) { field = parse_int<int>(key, v); },
                     [&field] { return std::to_string(field); }});
    };
    auto u64 = [&b](const std::string &key, std::uint64_t &field) {
        b.push_back({key, [&field, key](const std::string &v) { field = parse_int<std::uint64_t>(key, v); },
                     [&field] { return std::to_string(field); }});
    };
    auto flag = [&b](const std::string &key, bool &field) {
        b.push_back({key, [&field, key](const std::string &v) { field = parse_bool(key, v); },
                     [&field] { return std::string(field ? "true" : "false"); }});
    };

    auto &s = c.stream;
    u64("seed", s.seed);
    integer("width", s.width);
    integer("height", s.height);
    real("focal", s.focal);
    integer("frames", s.trajectory.frames);
    integer("context_ratio", c.context_ratio);
    b.push_back({"blank_frames",
                 [&s](const std::string &v) {
                     s.blank_frames.clear();
                     std::stringstream in(v);
                     std::string item;
                     while (std::getline(in, item, ',')) {
                         item = trim(item);
                         if (!item.empty()) {
                             s.blank_frames.push_back(parse_int<int>("blank_frames", item));
                         }
                     }
                 },
                 [&s] {
                     std::string out;
                     for (std::size_t k = 0; k < s.blank_frames.size(); ++k) {
                         out += (k ? "," : "") + std::to_string(s.blank_frames[k]);
                     }
                     return out;
                 }});

    b.push_back({"scene.kind",
                 [&s](const std::string &v) {
                     if (v == "terrain") {
                         s.scene.kind = oracle::SceneKind::Terrain;
                     } else if (v == "surfels") {
                         s.scene.kind = oracle::SceneKind::Surfels;
                     } else {
                         throw ConfigError("scene.kind: expected terrain or surfels, got '" + v + "'");
                     }
                 },
                 [&s] { return std::string(s.scene.kind == oracle::SceneKind::Terrain ? "terrain" : "surfels"); }});
    integer("scene.surfel_count", s.scene.surfel_count);
    real("scene.terrain_depth", s.scene.terrain_depth);
    real("scene.terrain_relief", s.scene.terrain_relief);
    real("scene.albedo_wavelength", s.scene.albedo_wavelength);
    integer("scene.descriptor_dim", s.scene.descriptor_dim);

    b.push_back({"trajectory.kind",
                 [&s](const std::string &v) {
                     if (v == "smooth") {
                         s.trajectory.kind = oracle::TrajectoryKind::Smooth;
                     } else if (v == "pixel_aligned") {
                         s.trajectory.kind = oracle::TrajectoryKind::PixelAligned;
                     } else {
                         throw ConfigError("trajectory.kind: expected smooth or pixel_aligned, got '" + v + "'");
                     }
                 },
                 [&s] {
                     return std::string(s.trajectory.kind == oracle::TrajectoryKind::Smooth ? "smooth"
                                                                                            : "pixel_aligned");
                 }});
    real("trajectory.max_rotation_deg", s.trajectory.max_rotation_deg);
    real("trajectory.max_translation", s.trajectory.max_translation);
    real("trajectory.smoothness", s.trajectory.smoothness);
    integer("trajectory.pixel_step", s.trajectory.pixel_step);

    real("corruption.point_noise", s.corruption.point_noise);
    real("corruption.bias_rotation_deg", s.corruption.bias_rotation_deg);
    real("corruption.bias_translation", s.corruption.bias_translation);
    real("corruption.confidence_fidelity", s.corruption.confidence_fidelity);
    real("corruption.descriptor_noise", s.corruption.descriptor_noise);
    real("corruption.outlier_fraction", s.corruption.outlier_fraction);

    auto &e = c.experiment;
    flag("pipeline.refine", e.pipeline.refine);
    flag("pipeline.merge", e.pipeline.merge);
    integer("pipeline.window", e.pipeline.window);
    real("pipeline.min_residual_reduction", e.pipeline.min_residual_reduction);
    integer("match.max_iterations", e.pipeline.match_filter.max_iterations);
    real("match.confidence", e.pipeline.match_filter.confidence);
    real("match.threshold_fraction", e.pipeline.match_filter.threshold_fraction);
    integer("match.min_inliers", e.pipeline.match_filter.min_inliers);
    u64("match.seed", e.pipeline.match_filter.seed);
    real("ransac.threshold_px", e.pipeline.ransac.threshold_px);
    integer("ransac.max_iterations", e.pipeline.ransac.max_iterations);
    real("ransac.confidence", e.pipeline.ransac.confidence);
    integer("ransac.refine_steps", e.pipeline.ransac.refine_steps);
    u64("ransac.seed", e.pipeline.ransac.seed);
    real("gate.max_rotation_deg", e.pipeline.gate.max_rotation_deg);
    real("gate.translation_factor", e.pipeline.gate.translation_factor);
    integer("gate.window", e.pipeline.gate.window);

    integer("model.feature2d_channels", e.decoder.feature2d_channels);
    integer("model.hidden", e.decoder.hidden);
    flag("model.use_2d_features", e.decoder.use_2d_features);
    real("model.init_scale", e.decoder.init_scale);
    real("model.init_opacity", e.decoder.init_opacity);
    b.push_back({"model.max_scale",
                 [&e](const std::string &v) {
                     const double x = parse_double("model.max_scale", v);
                     e.derive_max_scale = x <= 0.0;
                     if (x > 0.0) {
                         e.decoder.max_scale = x;
                     }
                 },
                 [&e] { return e.derive_max_scale ? std::string("0") : format_double(e.decoder.max_scale); }});
    u64("model.seed", e.model_seed);

    integer("train.steps", e.train.steps);
    real("train.learning_rate", e.train.learning_rate);
    real("train.lambda", e.train.lambda);
    u64("train.seed", e.train.seed);
    real("train.divergence_factor", e.train.divergence_factor);
    integer("train.divergence_patience", e.train.divergence_patience);
    real("train.beta1", e.train.adam.beta1);
    real("train.beta2", e.train.adam.beta2);
    real("train.epsilon", e.train.adam.epsilon);

    auto &r = e.train.render;
    real("render.low_pass", r.low_pass);
    real("render.max_alpha", r.max_alpha);
    real("render.cutoff_sigma", r.cutoff_sigma);
    real("render.min_transmittance", r.min_transmittance);
    real("render.near_plane", r.near_plane);
    b.push_back({"render.background",
                 [&r](const std::string &v) {
                     std::stringstream in(v);
                     std::string item;
                     std::vector<double> xs;
                     while (std::getline(in, item, ',')) {
                         xs.push_back(parse_double("render.background", trim(item)));
                     }
                     if (xs.size() != 3) {
                         throw ConfigError("render.background: expected r,g,b");
                     }
                     r.background = Vec3d(xs[0], xs[1], xs[2]);
                 },
                 [&r] {
                     return format_double(r.background.x()) + "," + format_double(r.background.y()) + "," +
                            format_double(r.background.z());
                 }});
    return b;
}

void check_ranges(const RunConfig &c) {
    const auto &s = c.stream;
    auto require = [](bool ok, const std::string &msg) {
        if (!ok) {
            throw ConfigError(msg);
        }
    };
    require(s.width >= 4 && s.height >= 4, "width and height must be at least 4");
    require(s.focal > 0.0, "focal must be positive");
    require(s.trajectory.frames >= 1, "frames must be at least 1");
    require(c.context_ratio >= 1, "context_ratio must be at least 1");
    require(s.scene.descriptor_dim >= 4 && s.scene.descriptor_dim % 4 == 0,
            "scene.descriptor_dim must be a positive multiple of 4");
    require(s.corruption.point_noise >= 0.0, "corruption.point_noise must be non-negative");
    require(s.corruption.descriptor_noise >= 0.0, "corruption.descriptor_noise must be non-negative");
    require(s.corruption.outlier_fraction >= 0.0 && s.corruption.outlier_fraction < 1.0,
            "corruption.outlier_fraction must lie in [0, 1)");
    const auto &e = c.experiment;
    require(e.pipeline.window == 2, "pipeline.window: only adjacent pairs (2) are supported");
    require(e.pipeline.min_residual_reduction >= 0.0 && e.pipeline.min_residual_reduction < 1.0,
            "pipeline.min_residual_reduction must lie in [0, 1)");
    require(e.train.steps >= 0, "train.steps must be non-negative");
    require(e.train.learning_rate >= 0.0, "train.learning_rate must be non-negative");
    require(e.train.lambda >= 0.0, "train.lambda must be non-negative");
    require(e.decoder.hidden >= 1 && e.decoder.feature2d_channels >= 1, "model widths must be positive");
    require(e.decoder.init_opacity > 0.0 && e.decoder.init_opacity < 1.0, "model.init_opacity must lie in (0, 1)");
    require(e.decoder.init_scale > 0.0, "model.init_scale must be positive");
}

} // namespace

std::map<std::string, std::string> parse_key_values(const std::string &text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        }
        if (!out.emplace(key, value).second) {
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
    }
    return out;
}

RunConfig apply_config(const std::map<std::string, std::string> &values, RunConfig base) {
    auto table = bindings(base);
    for (const auto &[key, value] : values) {
        auto it = std::find_if(table.begin(), table.end(), [&key](const Binding &b) { return b.key == key; });
        if (it == table.end()) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        it->set(value);
    }
    base.experiment.decoder.descriptor_dim = base.stream.scene.descriptor_dim;
    check_ranges(base);
    return base;
}

RunConfig load_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return apply_config(parse_key_values(buf.str()));
}

std::string dump_config(const RunConfig &config) {
    RunConfig copy = config;
    std::string out;
    for (const auto &b : bindings(copy)) {
        out += b.key + " = " + b.get() + "\n";
    }
    return out;
}

} // namespace streamsplat
