// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>

#include "streamsplat/image.hpp"

namespace streamsplat {

/// 10 log10(1 / MSE) over all pixels and channels; +infinity for identical
/// images.
double psnr(const Image &a, const Image &b);

struct SsimSettings {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Mean SSIM over every window position fully inside the image, computed
/// per channel and averaged. Throws InvalidArgument if the images differ in
/// size or are smaller than the window.
double ssim(const Image &a, const Image &b, const SsimSettings &settings = {});

struct SsimGradient {
    double value = 0.0;
    PointGrid grad_b; ///< d ssim / d b
};

SsimGradient ssim_with_gradient(const Image &a, const Image &b, const SsimSettings &settings = {});

} // namespace streamsplat
