// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "streamsplat/image.hpp"

namespace streamsplat {

/// H x W grid with C channels per pixel; row y * width + x holds pixel (x, y).
struct FeatureMap {
    int height = 0;
    int width = 0;
    RowMatrixXd data;

    FeatureMap() = default;
    FeatureMap(int h, int w, int c) : height(h), width(w), data(RowMatrixXd::Zero(h * w, c)) {}

    int channels() const { return static_cast<int>(data.cols()); }
    int size() const { return height * width; }
};

FeatureMap to_feature_map(const Image &image);

/// Channel-wise concatenation of maps with identical grids.
FeatureMap concat(const std::vector<const FeatureMap *> &maps);

/// Mutable view of one parameter tensor.
struct ParamView {
    std::string name;
    double *data = nullptr;
    Eigen::Index size = 0;
    std::vector<int> shape;
};

/// Two 3x3 convolutions (stride 1, zero padding) with a ReLU between them.
/// Weights are stored as out x (9 * in) matrices whose column index is
/// (ky * 3 + kx) * in + c.
class TinyConvNet {
public:
    TinyConvNet() = default;
    TinyConvNet(int in_channels, int hidden, int out_channels);

    /// He-normal weights, zero biases.
    void initialize(std::uint64_t seed);
    void set_zero();

    int in_channels() const { return in_; }
    int hidden() const { return hidden_; }
    int out_channels() const { return out_; }

    struct Cache {
        RowMatrixXd col1;
        RowMatrixXd pre;
        RowMatrixXd col2;
        int height = 0;
        int width = 0;
    };

    FeatureMap forward(const FeatureMap &input, Cache *cache = nullptr) const;

    /// Accumulates weight gradients into `grad` (same shapes as this net) and
    /// returns the gradient with respect to the input.
    FeatureMap backward(const Cache &cache, const FeatureMap &grad_output, TinyConvNet &grad) const;

    std::vector<ParamView> params(const std::string &prefix);
    Eigen::Index parameter_count() const;

    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;
    Eigen::VectorXd b2;

private:
    int in_ = 0;
    int hidden_ = 0;
    int out_ = 0;
};

/// 3x3 zero-padded neighbourhood unfolding: (H*W) x (9*C).
RowMatrixXd im2col(const RowMatrixXd &input, int height, int width);
/// Adjoint of im2col.
RowMatrixXd col2im(const RowMatrixXd &cols, int height, int width, int channels);

} // namespace streamsplat
