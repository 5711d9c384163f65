// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "streamsplat/errors.hpp"

namespace streamsplat {

void write_ppm(const std::filesystem::path &path, const Image &image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(image.size()) * 3);
    for (int i = 0; i < image.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(image.rgb(i, c), 0.0, 1.0);
            bytes[3 * i + c] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

namespace {

std::string next_token(std::istream &in) {
    std::string token;
    while (in) {
        const int c = in.peek();
        if (c == '#') {
            std::string comment;
            std::getline(in, comment);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    in >> token;
    return token;
}

} // namespace

Image read_ppm(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    if (next_token(in) != "P6") {
        throw IoError(path.string() + ": not a binary PPM");
    }
    const int width = std::stoi(next_token(in));
    const int height = std::stoi(next_token(in));
    const int maxval = std::stoi(next_token(in));
    if (width <= 0 || height <= 0 || maxval != 255) {
        throw IoError(path.string() + ": unsupported PPM header");
    }
    in.get(); // single whitespace before the raster
    std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * 3);
    in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) {
        throw IoError(path.string() + ": truncated raster");
    }
    Image image(height, width);
    for (int i = 0; i < image.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            image.rgb(i, c) = bytes[3 * i + c] / 255.0;
        }
    }
    return image;
}

} // namespace streamsplat
