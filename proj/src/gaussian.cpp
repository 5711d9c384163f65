// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "streamsplat/errors.hpp"

namespace streamsplat {

namespace {

constexpr double kSh0 = 0.28209479177387814;

const char *const kProperties[] = {"x",       "y",       "z",     "opacity", "scale_0", "scale_1", "scale_2",
                                   "rot_0",   "rot_1",   "rot_2", "rot_3",   "f_dc_0",  "f_dc_1",  "f_dc_2"};

} // namespace

Mat3d GaussianPrimitive::covariance() const {
    const Mat3d r = quaternion_to_rotation(q);
    return r * scale.cwiseProduct(scale).asDiagonal() * r.transpose();
}

void check_invariants(const GaussianPrimitive &g, double max_scale) {
    STREAMSPLAT_CHECK(g.mu.allFinite(), InvalidArgument, "Gaussian center is not finite");
    STREAMSPLAT_CHECK(std::abs(g.q.norm() - 1.0) <= 1e-6, InvalidArgument, "Gaussian quaternion is not unit");
    STREAMSPLAT_CHECK((g.scale.array() >= 1e-6).all() && (g.scale.array() <= max_scale).all(), InvalidArgument,
                      "Gaussian scale out of range");
    STREAMSPLAT_CHECK(g.opacity > 0.0 && g.opacity < 1.0, InvalidArgument, "Gaussian opacity outside (0, 1)");
    STREAMSPLAT_CHECK((g.color.array() >= 0.0).all() && (g.color.array() <= 1.0).all(), InvalidArgument,
                      "Gaussian color outside [0, 1]");
    Eigen::LLT<Mat3d> llt(g.covariance());
    STREAMSPLAT_CHECK(llt.info() == Eigen::Success, InvalidArgument, "Gaussian covariance is not positive definite");
}

void write_ply(const std::filesystem::path &path, const std::vector<GaussianPrimitive> &gaussians) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << gaussians.size() << "\n";
    for (const char *name : kProperties) {
        out << "property float " << name << "\n";
    }
    out << "end_header\n";
    for (const auto &g : gaussians) {
        const double a = std::clamp(g.opacity, 1e-12, 1.0 - 1e-12);
        float v[14];
        v[0] = static_cast<float>(g.mu.x());
        v[1] = static_cast<float>(g.mu.y());
        v[2] = static_cast<float>(g.mu.z());
        v[3] = static_cast<float>(std::log(a / (1.0 - a)));
        for (int k = 0; k < 3; ++k) {
            v[4 + k] = static_cast<float>(std::log(g.scale(k)));
        }
        for (int k = 0; k < 4; ++k) {
            v[7 + k] = static_cast<float>(g.q(k));
        }
        for (int k = 0; k < 3; ++k) {
            v[11 + k] = static_cast<float>((g.color(k) - 0.5) / kSh0);
        }
        for (const float f : v) {
            detail::write_le(out, f);
        }
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

std::vector<GaussianPrimitive> read_ply(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string line;
    std::getline(in, line);
    if (line != "ply") {
        throw IoError(path.string() + ": not a PLY file");
    }
    std::size_t count = 0;
    std::vector<std::string> props;
    bool binary = false;
    while (std::getline(in, line)) {
        if (line == "end_header") {
            break;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "format") {
            std::string fmt;
            ls >> fmt;
            binary = fmt == "binary_little_endian";
        } else if (key == "element") {
            std::string name;
            ls >> name >> count;
        } else if (key == "property") {
            std::string type;
            std::string name;
            ls >> type >> name;
            if (type != "float") {
                throw IoError(path.string() + ": unsupported property type " + type);
            }
            props.push_back(name);
        }
    }
    if (!binary || props.size() != 14) {
        throw IoError(path.string() + ": unexpected PLY layout");
    }
    for (std::size_t k = 0; k < props.size(); ++k) {
        if (props[k] != kProperties[k]) {
            throw IoError(path.string() + ": unexpected property " + props[k]);
        }
    }
    std::vector<GaussianPrimitive> out(count);
    for (auto &g : out) {
        float v[14];
        for (float &f : v) {
            f = detail::read_le<float>(in, "PLY vertex");
        }
        g.mu = Vec3d(v[0], v[1], v[2]);
        g.opacity = 1.0 / (1.0 + std::exp(-static_cast<double>(v[3])));
        for (int k = 0; k < 3; ++k) {
            g.scale(k) = std::exp(static_cast<double>(v[4 + k]));
            g.color(k) = 0.5 + kSh0 * v[11 + k];
        }
        g.q = Eigen::Vector4d(v[7], v[8], v[9], v[10]);
    }
    return out;
}

} // namespace streamsplat
