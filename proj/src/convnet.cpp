// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/convnet.hpp"

#include <cmath>

#include "random.hpp"
#include "streamsplat/errors.hpp"

namespace streamsplat {

FeatureMap to_feature_map(const Image &image) {
    FeatureMap f(image.height, image.width, 3);
    f.data = image.rgb;
    return f;
}

FeatureMap concat(const std::vector<const FeatureMap *> &maps) {
    STREAMSPLAT_CHECK(!maps.empty(), InvalidArgument, "concat of no feature maps");
    int channels = 0;
    for (const auto *m : maps) {
        STREAMSPLAT_CHECK(m->height == maps[0]->height && m->width == maps[0]->width, InvalidArgument,
                          "concat: grids differ");
        channels += m->channels();
    }
    FeatureMap out(maps[0]->height, maps[0]->width, channels);
    int offset = 0;
    for (const auto *m : maps) {
        out.data.middleCols(offset, m->channels()) = m->data;
        offset += m->channels();
    }
    return out;
}

RowMatrixXd im2col(const RowMatrixXd &input, int height, int width) {
    const int c = static_cast<int>(input.cols());
    RowMatrixXd cols = RowMatrixXd::Zero(static_cast<Eigen::Index>(height) * width, 9 * c);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const int row = y * width + x;
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = y + ky - 1;
                if (sy < 0 || sy >= height) {
                    continue;
                }
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = x + kx - 1;
                    if (sx < 0 || sx >= width) {
                        continue;
                    }
                    cols.row(row).segment((ky * 3 + kx) * c, c) = input.row(sy * width + sx);
                }
            }
        }
    }
    return cols;
}

RowMatrixXd col2im(const RowMatrixXd &cols, int height, int width, int channels) {
    RowMatrixXd out = RowMatrixXd::Zero(static_cast<Eigen::Index>(height) * width, channels);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const int row = y * width + x;
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = y + ky - 1;
                if (sy < 0 || sy >= height) {
                    continue;
                }
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = x + kx - 1;
                    if (sx < 0 || sx >= width) {
                        continue;
                    }
                    out.row(sy * width + sx) += cols.row(row).segment((ky * 3 + kx) * channels, channels);
                }
            }
        }
    }
    return out;
}

TinyConvNet::TinyConvNet(int in_channels, int hidden, int out_channels)
    : w1(Eigen::MatrixXd::Zero(hidden, 9 * in_channels)), b1(Eigen::VectorXd::Zero(hidden)),
      w2(Eigen::MatrixXd::Zero(out_channels, 9 * hidden)), b2(Eigen::VectorXd::Zero(out_channels)),
      in_(in_channels), hidden_(hidden), out_(out_channels) {
    STREAMSPLAT_CHECK(in_channels > 0 && hidden > 0 && out_channels > 0, InvalidArgument,
                      "TinyConvNet: channel counts must be positive");
}

void TinyConvNet::initialize(std::uint64_t seed) {
    auto rng = detail::make_rng(seed, {in_, hidden_, out_});
    std::normal_distribution<double> g;
    const double s1 = std::sqrt(2.0 / (9.0 * in_));
    const double s2 = std::sqrt(2.0 / (9.0 * hidden_));
    for (Eigen::Index j = 0; j < w1.cols(); ++j) {
        for (Eigen::Index i = 0; i < w1.rows(); ++i) {
            w1(i, j) = s1 * g(rng);
        }
    }
    for (Eigen::Index j = 0; j < w2.cols(); ++j) {
        for (Eigen::Index i = 0; i < w2.rows(); ++i) {
            w2(i, j) = s2 * g(rng);
        }
    }
    b1.setZero();
    b2.setZero();
}

void TinyConvNet::set_zero() {
    w1.setZero();
    b1.setZero();
    w2.setZero();
    b2.setZero();
}

FeatureMap TinyConvNet::forward(const FeatureMap &input, Cache *cache) const {
    STREAMSPLAT_CHECK(input.channels() == in_, InvalidArgument,
                      "TinyConvNet: expected " + std::to_string(in_) + " input channels, got " +
                          std::to_string(input.channels()));
    STREAMSPLAT_CHECK(input.data.allFinite(), InvalidArgument, "TinyConvNet: non-finite input");
    RowMatrixXd col1 = im2col(input.data, input.height, input.width);
    RowMatrixXd pre = col1 * w1.transpose();
    pre.rowwise() += b1.transpose();
    const RowMatrixXd act = pre.cwiseMax(0.0);
    RowMatrixXd col2 = im2col(act, input.height, input.width);
    FeatureMap out(input.height, input.width, out_);
    out.data.noalias() = col2 * w2.transpose();
    out.data.rowwise() += b2.transpose();
    if (cache != nullptr) {
        cache->col1 = std::move(col1);
        cache->pre = std::move(pre);
        cache->col2 = std::move(col2);
        cache->height = input.height;
        cache->width = input.width;
    }
    return out;
}

FeatureMap TinyConvNet::backward(const Cache &cache, const FeatureMap &grad_output, TinyConvNet &grad) const {
    STREAMSPLAT_CHECK(grad_output.channels() == out_ && grad_output.size() == cache.height * cache.width,
                      InvalidArgument, "TinyConvNet::backward: gradient shape mismatch");
    grad.w2.noalias() += grad_output.data.transpose() * cache.col2;
    grad.b2 += grad_output.data.colwise().sum().transpose();
    const RowMatrixXd dcol2 = grad_output.data * w2;
    RowMatrixXd dact = col2im(dcol2, cache.height, cache.width, hidden_);
    dact = dact.cwiseProduct((cache.pre.array() > 0.0).cast<double>().matrix());
    grad.w1.noalias() += dact.transpose() * cache.col1;
    grad.b1 += dact.colwise().sum().transpose();
    const RowMatrixXd dcol1 = dact * w1;
    FeatureMap out(cache.height, cache.width, in_);
    out.data = col2im(dcol1, cache.height, cache.width, in_);
    return out;
}

std::vector<ParamView> TinyConvNet::params(const std::string &prefix) {
    return {
        {prefix + ".conv1.weight", w1.data(), w1.size(), {hidden_, 9 * in_}},
        {prefix + ".conv1.bias", b1.data(), b1.size(), {hidden_}},
        {prefix + ".conv2.weight", w2.data(), w2.size(), {out_, 9 * hidden_}},
        {prefix + ".conv2.bias", b2.data(), b2.size(), {out_}},
    };
}

Eigen::Index TinyConvNet::parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

} // namespace streamsplat
