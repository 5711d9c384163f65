// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include "streamsplat/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "random.hpp"
#include "streamsplat/errors.hpp"

namespace streamsplat {

namespace {

constexpr char kCheckpointMagic[5] = "SGWT";
constexpr std::uint32_t kCheckpointVersion = 1;

const SsimPerceptualLoss &default_perceptual() {
    static const SsimPerceptualLoss loss;
    return loss;
}

bool row_valid(const PointGrid &grid, int i) { return grid.row(i).allFinite(); }

enum class Source { Previous, Current, Merged };

struct Entry {
    Source source;
    int pixel;
};

void scatter_raw(const std::vector<GaussianGrad> &grads, const std::vector<Entry> &entries,
                 const RowMatrixXd &raw_prev, const RowMatrixXd &raw_cur, const RowMatrixXd *raw_merged,
                 double max_scale, RowMatrixXd &g_prev, RowMatrixXd &g_cur, RowMatrixXd *g_merged) {
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const Entry &e = entries[k];
        switch (e.source) {
        case Source::Previous:
            g_prev.row(e.pixel) += heads_backward(raw_prev.row(e.pixel), grads[k], max_scale);
            break;
        case Source::Current:
            g_cur.row(e.pixel) += heads_backward(raw_cur.row(e.pixel), grads[k], max_scale);
            break;
        case Source::Merged:
            g_merged->row(e.pixel) += heads_backward(raw_merged->row(e.pixel), grads[k], max_scale);
            break;
        }
    }
}

} // namespace

double SsimPerceptualLoss::evaluate(const Image &reference, const Image &image, PointGrid *grad) const {
    if (grad == nullptr) {
        return 1.0 - ssim(reference, image, settings_);
    }
    SsimGradient g = ssim_with_gradient(reference, image, settings_);
    *grad = -g.grad_b;
    return 1.0 - g.value;
}

LossTerms compute_loss(const Image &gt, const Image &full, const Image &merged, double lambda, PointGrid *grad_full,
                       PointGrid *grad_merged, const PerceptualLoss *perceptual) {
    STREAMSPLAT_CHECK(gt.height == full.height && gt.width == full.width && gt.height == merged.height &&
                          gt.width == merged.width,
                      InvalidArgument, "loss: image dimensions differ");
    STREAMSPLAT_CHECK(lambda >= 0.0, InvalidArgument, "loss: lambda must be non-negative");
    const PerceptualLoss &ploss = perceptual != nullptr ? *perceptual : default_perceptual();
    LossTerms t;
    const PointGrid render_diff = full.rgb - gt.rgb;
    const PointGrid recon_diff = merged.rgb - full.rgb;
    t.rendering = render_diff.norm();
    t.reconstruction = recon_diff.norm();
    const bool small = gt.height < SsimSettings{}.window || gt.width < SsimSettings{}.window;
    PointGrid perceptual_grad;
    if (!(small && lambda == 0.0)) {
        t.perceptual = ploss.evaluate(gt, full, grad_full != nullptr ? &perceptual_grad : nullptr);
    }
    t.total = t.rendering + lambda * t.perceptual + t.reconstruction;
    if (grad_full != nullptr) {
        *grad_full = PointGrid::Zero(full.size(), 3);
        if (t.rendering > 0.0) {
            *grad_full += render_diff / t.rendering;
        }
        if (t.reconstruction > 0.0) {
            *grad_full -= recon_diff / t.reconstruction;
        }
        if (perceptual_grad.size() > 0 && lambda != 0.0) {
            *grad_full += lambda * perceptual_grad;
        }
    }
    if (grad_merged != nullptr) {
        *grad_merged = PointGrid::Zero(merged.size(), 3);
        if (t.reconstruction > 0.0) {
            *grad_merged += recon_diff / t.reconstruction;
        }
    }
    return t;
}

PairRender evaluate_pair(const GaussianModel &model, const TrainingPair &pair, TrainView view, double lambda,
                         const RenderSettings &settings, GaussianModel *grad) {
    const auto &cfg = model.config();
    const int n = pair.image_prev.size();
    STREAMSPLAT_CHECK(pair.image_cur.size() == n && pair.centers_prev.rows() == n && pair.centers_cur.rows() == n,
                      InvalidArgument, "training pair: inconsistent grid sizes");
    const bool want_grad = grad != nullptr;

    TinyConvNet::Cache f2d_cache_p, f2d_cache_c, dec_cache_p, dec_cache_c, merge_cache;
    FeatureMap f2d_p, f2d_c;
    if (cfg.use_2d_features) {
        f2d_p = extract_2d_features(model, pair.image_prev, want_grad ? &f2d_cache_p : nullptr);
        f2d_c = extract_2d_features(model, pair.image_cur, want_grad ? &f2d_cache_c : nullptr);
    }
    const FeatureMap fgs_p = gaussian_features(model, cfg.use_2d_features ? &f2d_p : nullptr, pair.local_prev,
                                               pair.descriptors_prev);
    const FeatureMap fgs_c =
        gaussian_features(model, cfg.use_2d_features ? &f2d_c : nullptr, pair.local_cur, pair.descriptors_cur);
    const DecodedGaussians dec_p = decode_gaussians(model, fgs_p, pair.centers_prev, want_grad ? &dec_cache_p : nullptr);
    const DecodedGaussians dec_c = decode_gaussians(model, fgs_c, pair.centers_cur, want_grad ? &dec_cache_c : nullptr);

    std::vector<bool> target(n, false), source(n, false);
    for (const auto &[i, j] : pair.matches.pairs) {
        if (row_valid(pair.centers_prev, i) && row_valid(pair.centers_cur, j)) {
            target[i] = true;
            source[j] = true;
        }
    }
    const bool has_merge = !pair.matches.pairs.empty();
    MergedGaussians merged;
    if (has_merge) {
        const FeatureMap warped = warp_features(fgs_c, fgs_p, pair.matches);
        const PointGrid centers = merged_centers(pair.centers_prev, pair.confidence_prev, pair.centers_cur,
                                                 pair.confidence_cur, pair.matches);
        merged = merge_gaussians(model, warped, fgs_p, centers, pair.matches, want_grad ? &merge_cache : nullptr);
    }

    std::vector<GaussianPrimitive> full_list, merged_list;
    std::vector<Entry> full_entries, merged_entries;
    for (int i = 0; i < n; ++i) {
        if (row_valid(pair.centers_prev, i)) {
            full_list.push_back(dec_p.gaussians[i]);
            full_entries.push_back({Source::Previous, i});
            if (target[i]) {
                merged_list.push_back(merged.gaussians[i]);
                merged_entries.push_back({Source::Merged, i});
            } else {
                merged_list.push_back(dec_p.gaussians[i]);
                merged_entries.push_back({Source::Previous, i});
            }
        }
    }
    for (int j = 0; j < n; ++j) {
        if (row_valid(pair.centers_cur, j)) {
            full_list.push_back(dec_c.gaussians[j]);
            full_entries.push_back({Source::Current, j});
            if (!source[j]) {
                merged_list.push_back(dec_c.gaussians[j]);
                merged_entries.push_back({Source::Current, j});
            }
        }
    }

    const CameraModel &camera = view == TrainView::Previous ? pair.camera_prev : pair.camera_cur;
    const Image &gt = view == TrainView::Previous ? pair.image_prev : pair.image_cur;
    const RenderResult full = render(full_list, camera, settings);
    const RenderResult merged_render = render(merged_list, camera, settings);

    PairRender out;
    out.full_count = static_cast<int>(full_list.size());
    out.merged_count = static_cast<int>(merged_list.size());
    PointGrid d_full, d_merged;
    out.terms = compute_loss(gt, full.image, merged_render.image, lambda, want_grad ? &d_full : nullptr,
                             want_grad ? &d_merged : nullptr);
    out.full = full.image;
    out.merged = merged_render.image;
    if (!want_grad) {
        return out;
    }

    const double max_scale = cfg.max_scale;
    RowMatrixXd g_prev = RowMatrixXd::Zero(n, kHeadChannels);
    RowMatrixXd g_cur = RowMatrixXd::Zero(n, kHeadChannels);
    RowMatrixXd g_merged = RowMatrixXd::Zero(n, kHeadChannels);
    const auto full_grads = render_backward(full, d_full, camera, settings);
    scatter_raw(full_grads, full_entries, dec_p.raw, dec_c.raw, nullptr, max_scale, g_prev, g_cur, nullptr);
    const auto merged_grads = render_backward(merged_render, d_merged, camera, settings);
    scatter_raw(merged_grads, merged_entries, dec_p.raw, dec_c.raw, has_merge ? &merged.raw : nullptr, max_scale,
                g_prev, g_cur, &g_merged);

    const int h = pair.image_prev.height, w = pair.image_prev.width;
    auto as_map = [h, w](RowMatrixXd data) {
        FeatureMap m;
        m.height = h;
        m.width = w;
        m.data = std::move(data);
        return m;
    };
    FeatureMap d_fgs_p = model.decoder.backward(dec_cache_p, as_map(std::move(g_prev)), grad->decoder);
    FeatureMap d_fgs_c = model.decoder.backward(dec_cache_c, as_map(std::move(g_cur)), grad->decoder);
    if (has_merge) {
        const FeatureMap d_input = model.merge.backward(merge_cache, as_map(std::move(g_merged)), grad->merge);
        const int c = fgs_p.channels();
        d_fgs_p.data += d_input.data.rightCols(c);
        RowMatrixXd d_warped = d_input.data.leftCols(c);
        std::vector<bool> warped_from_cur(n, false);
        for (const auto &[i, j] : pair.matches.pairs) {
            d_fgs_c.data.row(j) += d_warped.row(i);
            warped_from_cur[i] = true;
        }
        for (int i = 0; i < n; ++i) {
            if (!warped_from_cur[i]) {
                d_fgs_p.data.row(i) += d_warped.row(i);
            }
        }
    }
    if (cfg.use_2d_features) {
        const int c2 = cfg.feature2d_channels;
        model.feature2d.backward(f2d_cache_p, as_map(d_fgs_p.data.leftCols(c2)), grad->feature2d);
        model.feature2d.backward(f2d_cache_c, as_map(d_fgs_c.data.leftCols(c2)), grad->feature2d);
    }
    return out;
}

LossTerms gaussian_loss(const std::vector<GaussianPrimitive> &gaussians, const CameraModel &camera, const Image &gt,
                        double lambda, const RenderSettings &settings, std::vector<GaussianGrad> *grad) {
    const RenderResult r = render(gaussians, camera, settings);
    PointGrid d_full, d_merged;
    // The merged branch is the full render itself, so the reconstruction term vanishes.
    const LossTerms t = compute_loss(gt, r.image, r.image, lambda, grad != nullptr ? &d_full : nullptr, nullptr);
    if (grad != nullptr) {
        *grad = render_backward(r, d_full, camera, settings);
    }
    return t;
}

Adam::Adam(std::vector<ParamView> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const auto &p : params_) {
        m_.push_back(Eigen::VectorXd::Zero(p.size));
        v_.push_back(Eigen::VectorXd::Zero(p.size));
    }
}

void Adam::step(const std::vector<ParamView> &grads, double learning_rate) {
    STREAMSPLAT_CHECK(grads.size() == params_.size(), InvalidArgument, "adam: gradient list does not match");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, t_);
    const double c2 = 1.0 - std::pow(config_.beta2, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        STREAMSPLAT_CHECK(grads[k].size == params_[k].size, InvalidArgument, "adam: tensor size mismatch");
        Eigen::Map<Eigen::VectorXd> x(params_[k].data, params_[k].size);
        Eigen::Map<const Eigen::VectorXd> g(grads[k].data, grads[k].size);
        m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * g;
        v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * g.cwiseProduct(g);
        x.array() -= learning_rate * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + config_.epsilon);
    }
}

double cosine_learning_rate(double base, int step, int total) {
    if (total <= 0) {
        return base;
    }
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total));
}

TrainResult train(GaussianModel &model, const std::vector<TrainingPair> &pairs, const TrainConfig &config,
                  const std::function<void(const TrainStep &)> &progress) {
    STREAMSPLAT_CHECK(!pairs.empty(), InvalidArgument, "train: at least one training pair is required");
    STREAMSPLAT_CHECK(config.steps >= 0 && config.learning_rate >= 0.0, InvalidArgument,
                      "train: steps and learning rate must be non-negative");
    GaussianModel grad(model.config());
    Adam adam(model.params(), config.adam);
    auto rng = detail::make_rng(config.seed, {0x747261});
    std::uniform_int_distribution<int> pick(0, static_cast<int>(pairs.size()) - 1);

    TrainResult result;
    double initial = 0.0;
    int above = 0;
    for (int step = 0; step < config.steps; ++step) {
        TrainStep s;
        s.step = step;
        s.pair = pick(rng);
        s.view = step % 2 == 0 ? TrainView::Current : TrainView::Previous;
        s.learning_rate = cosine_learning_rate(config.learning_rate, step, config.steps);
        grad.set_zero();
        s.terms = evaluate_pair(model, pairs[s.pair], s.view, config.lambda, config.render, &grad).terms;
        if (!std::isfinite(s.terms.total)) {
            throw NumericalError("training produced a non-finite loss at step " + std::to_string(step));
        }
        if (step == 0) {
            initial = s.terms.total;
        }
        above = s.terms.total > config.divergence_factor * initial ? above + 1 : 0;
        result.curve.push_back(s);
        if (progress) {
            progress(s);
        }
        if (above >= config.divergence_patience) {
            std::ostringstream msg;
            msg << "training diverged at step " << step << ": loss " << s.terms.total << " stayed above "
                << config.divergence_factor << " x initial " << initial << " for " << above << " steps";
            throw NumericalError(msg.str());
        }
        adam.step(grad.params(), s.learning_rate);
    }
    return result;
}

LossTerms mean_loss(const GaussianModel &model, const std::vector<TrainingPair> &pairs, double lambda,
                    const RenderSettings &settings) {
    LossTerms acc;
    int count = 0;
    for (const auto &p : pairs) {
        for (TrainView v : {TrainView::Previous, TrainView::Current}) {
            const LossTerms t = evaluate_pair(model, p, v, lambda, settings).terms;
            acc.rendering += t.rendering;
            acc.perceptual += t.perceptual;
            acc.reconstruction += t.reconstruction;
            acc.total += t.total;
            ++count;
        }
    }
    if (count > 0) {
        acc.rendering /= count;
        acc.perceptual /= count;
        acc.reconstruction /= count;
        acc.total /= count;
    }
    return acc;
}

void write_checkpoint(const std::filesystem::path &path, GaussianModel &model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    const auto params = model.params();
    detail::write_magic(out, kCheckpointMagic);
    detail::write_le<std::uint32_t>(out, kCheckpointVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto &p : params) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) {
            detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
        for (Eigen::Index k = 0; k < p.size; ++k) {
            detail::write_le<float>(out, static_cast<float>(p.data[k]));
        }
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

void read_checkpoint(const std::filesystem::path &path, GaussianModel &model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    const std::string what = "checkpoint " + path.string();
    detail::expect_magic(in, kCheckpointMagic, what);
    const auto version = detail::read_le<std::uint32_t>(in, what);
    if (version != kCheckpointVersion) {
        throw IoError(what + ": unsupported version " + std::to_string(version));
    }
    auto params = model.params();
    const auto count = detail::read_le<std::uint32_t>(in, what);
    if (count != params.size()) {
        throw IoError(what + ": tensor count does not match the model");
    }
    for (auto &p : params) {
        const auto len = detail::read_le<std::uint32_t>(in, what);
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto ndim = detail::read_le<std::uint32_t>(in, what);
        std::vector<int> shape(ndim);
        for (auto &d : shape) {
            d = static_cast<int>(detail::read_le<std::uint32_t>(in, what));
        }
        if (!in || name != p.name || shape != p.shape) {
            throw IoError(what + ": tensor '" + name + "' does not match model tensor '" + p.name + "'");
        }
        for (Eigen::Index k = 0; k < p.size; ++k) {
            p.data[k] = detail::read_le<float>(in, what);
        }
    }
}

void write_loss_csv(const std::filesystem::path &path, const TrainResult &result) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << "step,pair,view,learning_rate,total,rendering,perceptual,reconstruction\n";
    out << std::setprecision(17);
    for (const auto &s : result.curve) {
        out << s.step << ',' << s.pair << ',' << (s.view == TrainView::Current ? "cur" : "prev") << ','
            << s.learning_rate << ',' << s.terms.total << ',' << s.terms.rendering << ',' << s.terms.perceptual
            << ',' << s.terms.reconstruction << '\n';
    }
}

} // namespace streamsplat
