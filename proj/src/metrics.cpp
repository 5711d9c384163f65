// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/metrics.hpp"

#include <cmath>
#include <vector>

#include "streamsplat/errors.hpp"

namespace streamsplat {

namespace {

void check_same_size(const Image &a, const Image &b) {
    STREAMSPLAT_CHECK(a.height == b.height && a.width == b.width, InvalidArgument, "image dimensions differ");
}

std::vector<double> gaussian_window(const SsimSettings &s) {
    std::vector<double> g1(s.window);
    double sum = 0.0;
    const double c = (s.window - 1) / 2.0;
    for (int k = 0; k < s.window; ++k) {
        g1[k] = std::exp(-0.5 * (k - c) * (k - c) / (s.sigma * s.sigma));
        sum += g1[k];
    }
    for (auto &v : g1) {
        v /= sum;
    }
    std::vector<double> w(s.window * s.window);
    for (int y = 0; y < s.window; ++y) {
        for (int x = 0; x < s.window; ++x) {
            w[y * s.window + x] = g1[y] * g1[x];
        }
    }
    return w;
}

SsimGradient ssim_impl(const Image &a, const Image &b, const SsimSettings &s, bool with_grad) {
    check_same_size(a, b);
    STREAMSPLAT_CHECK(a.height >= s.window && a.width >= s.window, InvalidArgument,
                      "ssim: image smaller than the window");
    const std::vector<double> w = gaussian_window(s);
    const double c1 = (s.k1 * s.dynamic_range) * (s.k1 * s.dynamic_range);
    const double c2 = (s.k2 * s.dynamic_range) * (s.k2 * s.dynamic_range);
    const int ny = a.height - s.window + 1;
    const int nx = a.width - s.window + 1;
    const double norm = 1.0 / (3.0 * nx * ny);

    SsimGradient out;
    if (with_grad) {
        out.grad_b = PointGrid::Zero(b.size(), 3);
    }
    double total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        for (int wy = 0; wy < ny; ++wy) {
            for (int wx = 0; wx < nx; ++wx) {
                double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
                for (int y = 0; y < s.window; ++y) {
                    for (int x = 0; x < s.window; ++x) {
                        const int i = (wy + y) * a.width + wx + x;
                        const double g = w[y * s.window + x];
                        const double va = a.rgb(i, ch);
                        const double vb = b.rgb(i, ch);
                        mx += g * va;
                        my += g * vb;
                        sxx += g * va * va;
                        syy += g * vb * vb;
                        sxy += g * (va * vb);
                    }
                }
                const double vx = sxx - mx * mx;
                const double vy = syy - my * my;
                const double cxy = sxy - mx * my;
                const double l_num = 2.0 * mx * my + c1;
                const double l_den = mx * mx + my * my + c1;
                const double c_num = 2.0 * cxy + c2;
                const double c_den = vx + vy + c2;
                const double value = (l_num * c_num) / (l_den * c_den);
                total += value;
                if (!with_grad) {
                    continue;
                }
                // Partials with respect to the window statistics of b.
                const double d_my = value * (2.0 * mx / l_num - 2.0 * my / l_den);
                const double d_vy = -value / c_den;
                const double d_cxy = value * 2.0 / c_num;
                const double base = d_my - 2.0 * my * d_vy - mx * d_cxy;
                for (int y = 0; y < s.window; ++y) {
                    for (int x = 0; x < s.window; ++x) {
                        const int i = (wy + y) * a.width + wx + x;
                        const double g = w[y * s.window + x];
                        out.grad_b(i, ch) +=
                            norm * g * (base + 2.0 * b.rgb(i, ch) * d_vy + a.rgb(i, ch) * d_cxy);
                    }
                }
            }
        }
    }
    out.value = total * norm;
    return out;
}

} // namespace

double psnr(const Image &a, const Image &b) {
    check_same_size(a, b);
    STREAMSPLAT_CHECK(a.size() > 0, InvalidArgument, "psnr of empty images");
    const double mse = (a.rgb - b.rgb).squaredNorm() / static_cast<double>(a.rgb.size());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image &a, const Image &b, const SsimSettings &settings) {
    return ssim_impl(a, b, settings, false).value;
}

SsimGradient ssim_with_gradient(const Image &a, const Image &b, const SsimSettings &settings) {
    return ssim_impl(a, b, settings, true);
}

} // namespace streamsplat
