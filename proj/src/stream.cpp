// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/stream.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "streamsplat/errors.hpp"

namespace streamsplat {

namespace {

constexpr char kDescriptorMagic[5] = "SDSC";
constexpr std::uint32_t kDescriptorVersion = 1;

std::string frame_name(const char *prefix, int frame, const char *suffix) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%04d%s", prefix, frame, suffix);
    return buf;
}

std::string pair_name(int a, int b, const char *which) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "pair_%04d_%04d_%s.pm", a, b, which);
    return buf;
}

} // namespace

std::vector<int> context_frames(int frames, int ratio) {
    STREAMSPLAT_CHECK(frames >= 1 && ratio >= 1, InvalidArgument, "context_frames: need frames >= 1, ratio >= 1");
    std::vector<int> out;
    for (int f = 0; f < frames; f += ratio) {
        out.push_back(f);
    }
    return out;
}

std::vector<int> test_frames(int frames, int ratio) {
    std::vector<int> out;
    if (ratio < 2) {
        return out;
    }
    const auto ctx = context_frames(frames, ratio);
    for (std::size_t k = 0; k + 1 < ctx.size(); ++k) {
        out.push_back((ctx[k] + ctx[k + 1]) / 2);
    }
    return out;
}

OracleSource::OracleSource(const oracle::SyntheticStream &stream, std::vector<int> frames)
    : stream_(&stream), frames_(std::move(frames)) {
    for (int f : frames_) {
        STREAMSPLAT_CHECK(f >= 0 && f < stream.frame_count(), InvalidArgument, "OracleSource: frame out of range");
    }
}

void write_descriptors(const std::filesystem::path &path, const DescriptorMap &map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    detail::write_magic(out, kDescriptorMagic);
    detail::write_le<std::uint32_t>(out, kDescriptorVersion);
    detail::write_le<std::int32_t>(out, map.frame_id);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.height));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.width));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.dim()));
    out.write(reinterpret_cast<const char *>(map.features.data()),
              static_cast<std::streamsize>(sizeof(double) * map.features.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

DescriptorMap read_descriptors(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    const std::string what = "descriptor map " + path.string();
    detail::expect_magic(in, kDescriptorMagic, what);
    if (detail::read_le<std::uint32_t>(in, what) != kDescriptorVersion) {
        throw IoError(what + ": unsupported version");
    }
    DescriptorMap map;
    map.frame_id = detail::read_le<std::int32_t>(in, what);
    map.height = static_cast<int>(detail::read_le<std::uint32_t>(in, what));
    map.width = static_cast<int>(detail::read_le<std::uint32_t>(in, what));
    const auto dim = detail::read_le<std::uint32_t>(in, what);
    if (map.height <= 0 || map.width <= 0 || dim == 0 || dim > 4096) {
        throw IoError(what + ": implausible header");
    }
    map.features.resize(static_cast<Eigen::Index>(map.height) * map.width, dim);
    in.read(reinterpret_cast<char *>(map.features.data()),
            static_cast<std::streamsize>(sizeof(double) * map.features.size()));
    if (!in) {
        throw IoError(what + ": truncated");
    }
    return map;
}

void write_pose_records(const std::filesystem::path &path, const std::vector<PoseRecord> &poses) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    for (const auto &p : poses) {
        const Eigen::Vector4d q = rotation_to_quaternion(p.pose.rotation);
        nlohmann::ordered_json j;
        j["frame_id"] = p.frame_id;
        j["quaternion"] = {q(0), q(1), q(2), q(3)};
        j["translation"] = {p.pose.translation.x(), p.pose.translation.y(), p.pose.translation.z()};
        j["focal"] = p.focal;
        out << j.dump() << '\n';
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

std::vector<PoseRecord> read_pose_records(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<PoseRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            PoseRecord r;
            r.frame_id = j.at("frame_id").get<int>();
            const auto &q = j.at("quaternion");
            const auto &t = j.at("translation");
            r.pose.rotation = quaternion_to_rotation(
                Eigen::Vector4d(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                                q.at(3).get<double>()));
            r.pose.translation = Vec3d(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
            r.focal = j.value("focal", 0.0);
            out.push_back(r);
        } catch (const nlohmann::json::exception &e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_stream_directory(const std::filesystem::path &dir, const oracle::SyntheticStream &stream,
                            const std::vector<int> &context) {
    STREAMSPLAT_CHECK(!context.empty(), InvalidArgument, "write_stream_directory: no context frames");
    std::filesystem::create_directories(dir);
    const int n = stream.frame_count();
    std::vector<PoseRecord> poses;
    for (int f = 0; f < n; ++f) {
        write_ppm(dir / frame_name("frame_", f, ".ppm"), stream.image(f));
        poses.push_back({f, stream.poses()[f], stream.config().focal});
    }
    write_pose_records(dir / "poses_gt.jsonl", poses);

    auto write_pair = [&](int a, int b) {
        const auto pair = stream.predict_pointmaps(a, b);
        write_point_map(dir / pair_name(a, b, "self"), pair.self);
        write_point_map(dir / pair_name(a, b, "cross"), pair.cross);
    };
    write_pair(context.front(), context.front());
    for (std::size_t k = 0; k + 1 < context.size(); ++k) {
        write_pair(context[k], context[k + 1]);
        write_pair(context[k + 1], context[k]);
    }
    for (int f : context) {
        write_descriptors(dir / frame_name("desc_", f, ".bin"), stream.predict_descriptors(f));
    }

    std::vector<int> test;
    for (int f = context.front() + 1; f < context.back(); ++f) {
        if (std::find(context.begin(), context.end(), f) == context.end()) {
            test.push_back(f);
        }
    }
    nlohmann::ordered_json meta;
    meta["seed"] = stream.config().seed;
    meta["width"] = stream.config().width;
    meta["height"] = stream.config().height;
    meta["frames"] = n;
    meta["context"] = context;
    meta["test"] = test;
    std::ofstream out(dir / "stream.json");
    out << meta.dump(2) << '\n';
    if (!out) {
        throw IoError("failed writing " + (dir / "stream.json").string());
    }
}

DirectorySource::DirectorySource(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::ifstream in(dir_ / "stream.json");
    if (!in) {
        throw IoError("not a stream directory (missing stream.json): " + dir_.string());
    }
    try {
        const auto meta = nlohmann::json::parse(in);
        width_ = meta.at("width").get<int>();
        height_ = meta.at("height").get<int>();
        const int n = meta.at("frames").get<int>();
        for (int f = 0; f < n; ++f) {
            frames_.push_back(f);
        }
        context_ = meta.at("context").get<std::vector<int>>();
        test_ = meta.at("test").get<std::vector<int>>();
    } catch (const nlohmann::json::exception &e) {
        throw IoError("stream.json: " + std::string(e.what()));
    }
    for (const auto &r : read_pose_records(dir_ / "poses_gt.jsonl")) {
        truth_[r.frame_id] = r;
    }
}

Image DirectorySource::image(int frame) const { return read_ppm(dir_ / frame_name("frame_", frame, ".ppm")); }

oracle::PointMapPair DirectorySource::predict_pointmaps(int a, int b) const {
    oracle::PointMapPair out;
    out.self = read_point_map(dir_ / pair_name(a, b, "self"));
    out.cross = read_point_map(dir_ / pair_name(a, b, "cross"));
    return out;
}

DescriptorMap DirectorySource::predict_descriptors(int frame) const {
    return read_descriptors(dir_ / frame_name("desc_", frame, ".bin"));
}

} // namespace streamsplat
