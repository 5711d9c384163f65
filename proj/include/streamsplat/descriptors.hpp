// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "streamsplat/image.hpp"

namespace streamsplat {

/// Per-pixel local 3D descriptors of one frame.
struct DescriptorMap {
    int frame_id = 0;
    int height = 0;
    int width = 0;
    RowMatrixXd features; ///< (H*W) x d, unit rows

    int size() const { return height * width; }
    int dim() const { return static_cast<int>(features.cols()); }
};

} // namespace streamsplat
