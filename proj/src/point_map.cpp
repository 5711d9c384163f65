// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/point_map.hpp"

#include <fstream>

#include "binary_io.hpp"
#include "streamsplat/errors.hpp"

namespace streamsplat {

void validate(const PointMap &pm) {
    STREAMSPLAT_CHECK(pm.height > 0 && pm.width > 0, InvalidArgument, "point map has empty grid");
    STREAMSPLAT_CHECK(pm.points.rows() == pm.size() && pm.confidence.size() == pm.size(), InvalidArgument,
                      "point map grid size does not match its dimensions");
    for (int i = 0; i < pm.size(); ++i) {
        STREAMSPLAT_CHECK(pm.confidence(i) >= 1.0, InvalidArgument, "point map confidence below 1");
        if (pm.confidence(i) > 1.0) {
            STREAMSPLAT_CHECK(pm.points.row(i).allFinite(), InvalidArgument,
                              "confident point map entry is not finite");
        }
    }
}

void write_point_map(const std::filesystem::path &path, const PointMap &pm) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    detail::write_magic(out, "PMAP");
    detail::write_le<std::uint32_t>(out, 1);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(pm.height));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(pm.width));
    detail::write_le<std::int32_t>(out, pm.frame_id);
    detail::write_le<std::int32_t>(out, pm.ref_frame_id);
    for (int i = 0; i < pm.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            detail::write_le<float>(out, static_cast<float>(pm.points(i, c)));
        }
    }
    for (int i = 0; i < pm.size(); ++i) {
        detail::write_le<float>(out, static_cast<float>(pm.confidence(i)));
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

PointMap read_point_map(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    detail::expect_magic(in, "PMAP", path.string());
    const auto version = detail::read_le<std::uint32_t>(in, "version");
    if (version != 1) {
        throw IoError(path.string() + ": unsupported PMAP version " + std::to_string(version));
    }
    const auto h = detail::read_le<std::uint32_t>(in, "height");
    const auto w = detail::read_le<std::uint32_t>(in, "width");
    const auto frame = detail::read_le<std::int32_t>(in, "frame_id");
    const auto ref = detail::read_le<std::int32_t>(in, "ref_frame_id");
    PointMap pm(frame, ref, static_cast<int>(h), static_cast<int>(w));
    for (int i = 0; i < pm.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            pm.points(i, c) = detail::read_le<float>(in, "points");
        }
    }
    for (int i = 0; i < pm.size(); ++i) {
        pm.confidence(i) = detail::read_le<float>(in, "confidence");
    }
    return pm;
}

} // namespace streamsplat
