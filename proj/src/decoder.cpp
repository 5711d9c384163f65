// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "random.hpp"
#include "streamsplat/errors.hpp"

namespace streamsplat {

namespace {

constexpr double kMinScale = 1e-6;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

GaussianPrimitive activate_heads(const Eigen::Ref<const Eigen::RowVectorXd> &raw, const Vec3d &mu, double max_scale) {
    STREAMSPLAT_CHECK(raw.size() == kHeadChannels, InvalidArgument, "head row must have 11 channels");
    GaussianPrimitive g;
    g.mu = mu;
    Eigen::Vector4d v = raw.segment<4>(0).transpose();
    v(0) += 1.0;
    const double n = v.norm();
    g.q = n > 0.0 ? Eigen::Vector4d(v / n) : Eigen::Vector4d(1, 0, 0, 0);
    for (int k = 0; k < 3; ++k) {
        g.scale(k) = std::clamp(std::exp(raw(4 + k)), kMinScale, max_scale);
        g.color(k) = logistic(raw(8 + k));
    }
    g.opacity = logistic(raw(7));
    return g;
}

Eigen::RowVectorXd heads_backward(const Eigen::Ref<const Eigen::RowVectorXd> &raw, const GaussianGrad &grad,
                                  double max_scale) {
    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(kHeadChannels);
    Eigen::Vector4d v = raw.segment<4>(0).transpose();
    v(0) += 1.0;
    const double n = v.norm();
    if (n > 0.0) {
        const Eigen::Vector4d q = v / n;
        out.segment<4>(0) = ((grad.q - q * q.dot(grad.q)) / n).transpose();
    }
    for (int k = 0; k < 3; ++k) {
        const double e = std::exp(raw(4 + k));
        if (e > kMinScale && e < max_scale) {
            out(4 + k) = grad.scale(k) * e;
        }
        const double c = logistic(raw(8 + k));
        out(8 + k) = grad.color(k) * c * (1.0 - c);
    }
    const double a = logistic(raw(7));
    out(7) = grad.opacity * a * (1.0 - a);
    return out;
}

GaussianModel::GaussianModel(const DecoderConfig &config)
    : feature2d(3, config.hidden, config.feature2d_channels),
      decoder(config.gaussian_feature_channels(), config.hidden, kHeadChannels),
      merge(2 * config.gaussian_feature_channels(), config.hidden, kHeadChannels), config_(config) {
    STREAMSPLAT_CHECK(config.max_scale > kMinScale, InvalidArgument, "max_scale must exceed 1e-6");
}

void GaussianModel::initialize(std::uint64_t seed) {
    feature2d.initialize(detail::splitmix64(seed ^ 0x2d));
    decoder.initialize(detail::splitmix64(seed ^ 0x6473));
    merge.initialize(detail::splitmix64(seed ^ 0x6d67));
    const double scale_bias = std::log(config_.init_scale);
    const double opacity_bias = std::log(config_.init_opacity / (1.0 - config_.init_opacity));
    for (TinyConvNet *net : {&decoder, &merge}) {
        net->w2 *= 0.1;
        net->b2.segment<3>(4).setConstant(scale_bias);
        net->b2(7) = opacity_bias;
    }
}

void GaussianModel::set_zero() {
    feature2d.set_zero();
    decoder.set_zero();
    merge.set_zero();
}

std::vector<ParamView> GaussianModel::params() {
    std::vector<ParamView> out = feature2d.params("feature2d");
    for (auto &p : decoder.params("decoder")) {
        out.push_back(p);
    }
    for (auto &p : merge.params("merge")) {
        out.push_back(p);
    }
    return out;
}

Eigen::Index GaussianModel::parameter_count() const {
    return feature2d.parameter_count() + decoder.parameter_count() + merge.parameter_count();
}

FeatureMap extract_2d_features(const GaussianModel &model, const Image &image, TinyConvNet::Cache *cache) {
    return model.feature2d.forward(to_feature_map(image), cache);
}

FeatureMap gaussian_features(const GaussianModel &model, const FeatureMap *f2d, const PointGrid &points,
                             const DescriptorMap &descriptors) {
    const auto &cfg = model.config();
    STREAMSPLAT_CHECK(descriptors.dim() == cfg.descriptor_dim, InvalidArgument, "descriptor dimension mismatch");
    STREAMSPLAT_CHECK(points.rows() == descriptors.size(), InvalidArgument, "point grid and descriptors differ");
    FeatureMap x(descriptors.height, descriptors.width, 3);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        if (points.row(i).allFinite()) {
            x.data.row(i) = points.row(i);
        }
    }
    FeatureMap f3d(descriptors.height, descriptors.width, descriptors.dim());
    f3d.data = descriptors.features;
    if (cfg.use_2d_features) {
        STREAMSPLAT_CHECK(f2d != nullptr && f2d->channels() == cfg.feature2d_channels, InvalidArgument,
                          "2D features missing or of the wrong width");
        return concat({f2d, &x, &f3d});
    }
    return concat({&x, &f3d});
}

DecodedGaussians decode_gaussians(const GaussianModel &model, const FeatureMap &fgs, const PointGrid &centers,
                                  TinyConvNet::Cache *cache) {
    STREAMSPLAT_CHECK(fgs.data.allFinite(), InvalidArgument, "decode_gaussians: non-finite features");
    STREAMSPLAT_CHECK(centers.rows() == fgs.size(), InvalidArgument, "decode_gaussians: center grid size mismatch");
    DecodedGaussians out;
    out.raw = model.decoder.forward(fgs, cache).data;
    out.gaussians.resize(fgs.size());
    for (int i = 0; i < fgs.size(); ++i) {
        out.gaussians[i] = activate_heads(out.raw.row(i), centers.row(i).transpose(), model.config().max_scale);
    }
    return out;
}

FeatureMap warp_features(const FeatureMap &fgs_cur, const FeatureMap &fgs_prev, const ExtendedMatchSet &matches) {
    STREAMSPLAT_CHECK(fgs_cur.height == fgs_prev.height && fgs_cur.width == fgs_prev.width &&
                          fgs_cur.channels() == fgs_prev.channels(),
                      InvalidArgument, "warp_features: layouts differ");
    FeatureMap out = fgs_prev;
    for (const auto &[i, j] : matches.pairs) {
        STREAMSPLAT_CHECK(i >= 0 && i < out.size() && j >= 0 && j < fgs_cur.size(), InvalidArgument,
                          "warp_features: match index out of range");
        out.data.row(i) = fgs_cur.data.row(j);
    }
    return out;
}

PointGrid merged_centers(const PointGrid &prev_centers, const Eigen::VectorXd &prev_confidence,
                         const PointGrid &cur_centers, const Eigen::VectorXd &cur_confidence,
                         const ExtendedMatchSet &matches) {
    PointGrid out = prev_centers;
    for (const auto &[i, j] : matches.pairs) {
        const double wa = prev_confidence(i);
        const double wb = cur_confidence(j);
        const bool fa = prev_centers.row(i).allFinite();
        const bool fb = cur_centers.row(j).allFinite();
        if (fa && fb) {
            out.row(i) = (wa * prev_centers.row(i) + wb * cur_centers.row(j)) / (wa + wb);
        } else if (fb) {
            out.row(i) = cur_centers.row(j);
        }
    }
    return out;
}

MergedGaussians merge_gaussians(const GaussianModel &model, const FeatureMap &warped, const FeatureMap &fgs_prev,
                                const PointGrid &centers, const ExtendedMatchSet &matches,
                                TinyConvNet::Cache *cache) {
    const FeatureMap input = concat({&warped, &fgs_prev});
    MergedGaussians out;
    out.raw = model.merge.forward(input, cache).data;
    STREAMSPLAT_CHECK(centers.rows() == warped.size(), InvalidArgument, "merge_gaussians: center grid size mismatch");
    out.gaussians.resize(warped.size());
    out.merged.assign(warped.size(), false);
    for (const auto &pair : matches.pairs) {
        out.merged[pair.first] = true;
    }
    for (int i = 0; i < warped.size(); ++i) {
        out.gaussians[i] = activate_heads(out.raw.row(i), centers.row(i).transpose(), model.config().max_scale);
    }
    return out;
}

AttributeDistances attribute_distance(const GaussianPrimitive &a, const GaussianPrimitive &b) {
    AttributeDistances d;
    d.opacity = std::abs(a.opacity - b.opacity);
    const double c = std::min(1.0, std::abs(a.q.normalized().dot(b.q.normalized())));
    d.rotation = std::acos(c);
    d.scale = (a.scale - b.scale).norm();
    d.color = (a.color - b.color).norm();
    return d;
}

AttributeSimilarity attribute_similarity(const std::vector<GaussianPrimitive> &a,
                                         const std::vector<GaussianPrimitive> &b, std::uint64_t seed) {
    STREAMSPLAT_CHECK(!a.empty() && a.size() == b.size(), InvalidArgument,
                      "attribute_similarity needs equally many (>= 1) pairs");
    auto rng = detail::make_rng(seed, {0x617474});
    std::uniform_int_distribution<std::size_t> pick(0, b.size() - 1);
    AttributeSimilarity out;
    out.pairs = static_cast<int>(a.size());
    auto add = [](AttributeDistances &acc, const AttributeDistances &d) {
        acc.opacity += d.opacity;
        acc.rotation += d.rotation;
        acc.scale += d.scale;
        acc.color += d.color;
    };
    for (std::size_t k = 0; k < a.size(); ++k) {
        add(out.matched, attribute_distance(a[k], b[k]));
        add(out.random, attribute_distance(a[k], b[pick(rng)]));
    }
    for (AttributeDistances *d : {&out.matched, &out.random}) {
        d->opacity /= out.pairs;
        d->rotation /= out.pairs;
        d->scale /= out.pairs;
        d->color /= out.pairs;
    }
    return out;
}

} // namespace streamsplat
