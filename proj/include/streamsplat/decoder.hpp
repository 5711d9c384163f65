// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "streamsplat/convnet.hpp"
#include "streamsplat/descriptors.hpp"
#include "streamsplat/gaussian.hpp"
#include "streamsplat/matching.hpp"

namespace streamsplat {

/// Raw head layout per pixel: quaternion (4), log-scale (3), opacity logit
/// (1), color logits (3).
inline constexpr int kHeadChannels = 11;

struct DecoderConfig {
    int feature2d_channels = 8;
    int descriptor_dim = 24;
    int hidden = 16;
    bool use_2d_features = true;
    double max_scale = 1.0;    ///< upper scale clamp, half the scene diagonal
    double init_scale = 0.03;  ///< head bias initialization
    double init_opacity = 0.8;

    /// Channels of the per-pixel Gaussian feature F_2D + X + F_3D.
    int gaussian_feature_channels() const { return (use_2d_features ? feature2d_channels : 0) + 3 + descriptor_dim; }
};

/// Maps one row of raw head outputs to a primitive: q = normalize(raw + (1,0,0,0)),
/// scale = clamp(exp(raw), 1e-6, max_scale), opacity and color logistic.
GaussianPrimitive activate_heads(const Eigen::Ref<const Eigen::RowVectorXd> &raw, const Vec3d &mu, double max_scale);

/// dL/draw for one row given dL/d(primitive); clamped scales pass no gradient.
Eigen::RowVectorXd heads_backward(const Eigen::Ref<const Eigen::RowVectorXd> &raw, const GaussianGrad &grad,
                                  double max_scale);

/// The three trainable networks: 2D feature extractor, Gaussian decoder and
/// merge network.
class GaussianModel {
public:
    GaussianModel() = default;
    explicit GaussianModel(const DecoderConfig &config);

    void initialize(std::uint64_t seed);
    void set_zero();

    const DecoderConfig &config() const { return config_; }
    DecoderConfig &config() { return config_; }

    std::vector<ParamView> params();
    Eigen::Index parameter_count() const;

    TinyConvNet feature2d;
    TinyConvNet decoder;
    TinyConvNet merge;

private:
    DecoderConfig config_;
};

FeatureMap extract_2d_features(const GaussianModel &model, const Image &image, TinyConvNet::Cache *cache = nullptr);

/// F_GS = F_2D + X + F_3D (F_2D omitted when the model does not use it).
/// Non-finite points are written as zeros.
FeatureMap gaussian_features(const GaussianModel &model, const FeatureMap *f2d, const PointGrid &points,
                             const DescriptorMap &descriptors);

struct DecodedGaussians {
    std::vector<GaussianPrimitive> gaussians;
    RowMatrixXd raw;
};

/// One primitive per pixel with mu taken verbatim from `centers`.
DecodedGaussians decode_gaussians(const GaussianModel &model, const FeatureMap &fgs, const PointGrid &centers,
                                  TinyConvNet::Cache *cache = nullptr);

/// Previous-frame pixel i takes the current-frame feature of its matched
/// pixel j when (i, j) is in the extended set, otherwise keeps its own.
FeatureMap warp_features(const FeatureMap &fgs_cur, const FeatureMap &fgs_prev, const ExtendedMatchSet &matches);

/// Confidence-weighted mean of matched centers, indexed by previous-frame
/// pixel; unmatched pixels keep the previous center.
PointGrid merged_centers(const PointGrid &prev_centers, const Eigen::VectorXd &prev_confidence,
                         const PointGrid &cur_centers, const Eigen::VectorXd &cur_confidence,
                         const ExtendedMatchSet &matches);

struct MergedGaussians {
    std::vector<GaussianPrimitive> gaussians; ///< one per previous-frame pixel
    std::vector<bool> merged;
    RowMatrixXd raw;
};

MergedGaussians merge_gaussians(const GaussianModel &model, const FeatureMap &warped, const FeatureMap &fgs_prev,
                                const PointGrid &centers, const ExtendedMatchSet &matches,
                                TinyConvNet::Cache *cache = nullptr);

struct AttributeDistances {
    double opacity = 0.0;
    double rotation = 0.0; ///< radians, acos |<q1, q2>|
    double scale = 0.0;
    double color = 0.0;
};

struct AttributeSimilarity {
    AttributeDistances matched;
    AttributeDistances random;
    int pairs = 0;
};

/// Mean attribute distances between a[k] and b[k], and between a[k] and a
/// seeded random element of b.
AttributeSimilarity attribute_similarity(const std::vector<GaussianPrimitive> &a,
                                         const std::vector<GaussianPrimitive> &b, std::uint64_t seed);

AttributeDistances attribute_distance(const GaussianPrimitive &a, const GaussianPrimitive &b);

} // namespace streamsplat
