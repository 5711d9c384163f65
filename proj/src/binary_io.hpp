// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "streamsplat/errors.hpp"

namespace streamsplat::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T> void write_le(std::ostream &out, T value) {
    out.write(reinterpret_cast<const char *>(&value), sizeof(T));
}

template <typename T> T read_le(std::istream &in, const std::string &what) {
    T value{};
    in.read(reinterpret_cast<char *>(&value), sizeof(T));
    if (!in) {
        throw IoError("truncated input while reading " + what);
    }
    return value;
}

inline void write_magic(std::ostream &out, const char (&magic)[5]) { out.write(magic, 4); }

inline void expect_magic(std::istream &in, const char (&magic)[5], const std::string &what) {
    char buf[4] = {};
    in.read(buf, 4);
    if (!in || std::memcmp(buf, magic, 4) != 0) {
        throw IoError(what + ": bad magic");
    }
}

} // namespace streamsplat::detail
