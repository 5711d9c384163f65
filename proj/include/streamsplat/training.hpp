// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "streamsplat/decoder.hpp"
#include "streamsplat/metrics.hpp"
#include "streamsplat/render.hpp"

namespace streamsplat {

/// Perceptual distance between a reference and a rendered image.
class PerceptualLoss {
public:
    virtual ~PerceptualLoss() = default;
    /// Returns the loss; when `grad` is set, writes d loss / d image.
    virtual double evaluate(const Image &reference, const Image &image, PointGrid *grad) const = 0;
};

/// 1 - SSIM.
class SsimPerceptualLoss : public PerceptualLoss {
public:
    explicit SsimPerceptualLoss(SsimSettings settings = {}) : settings_(settings) {}
    double evaluate(const Image &reference, const Image &image, PointGrid *grad) const override;

private:
    SsimSettings settings_;
};

struct LossTerms {
    double rendering = 0.0;      ///< |I - I_full|, root-sum-square
    double perceptual = 0.0;     ///< unweighted perceptual term
    double reconstruction = 0.0; ///< |I_merged - I_full|
    double total = 0.0;
};

/// rendering + lambda * perceptual + reconstruction. The perceptual term is
/// skipped (reported as 0) only when lambda is 0 and the images are smaller
/// than the SSIM window. Gradients are written when the pointers are set.
LossTerms compute_loss(const Image &gt, const Image &full, const Image &merged, double lambda,
                       PointGrid *grad_full = nullptr, PointGrid *grad_merged = nullptr,
                       const PerceptualLoss *perceptual = nullptr);

/// Everything one training step needs from two adjacent processed frames.
struct TrainingPair {
    int frame_prev = 0;
    int frame_cur = 0;
    Image image_prev;
    Image image_cur;
    CameraModel camera_prev;
    CameraModel camera_cur;
    PointGrid centers_prev; ///< world frame; non-finite rows are invalid pixels
    PointGrid centers_cur;
    PointGrid local_prev; ///< X channel, each frame's own camera coordinates
    PointGrid local_cur;
    Eigen::VectorXd confidence_prev;
    Eigen::VectorXd confidence_cur;
    DescriptorMap descriptors_prev;
    DescriptorMap descriptors_cur;
    ExtendedMatchSet matches; ///< (previous pixel, current pixel)
};

enum class TrainView { Previous = 0, Current = 1 };

struct PairRender {
    LossTerms terms;
    Image full;
    Image merged;
    int full_count = 0;
    int merged_count = 0;
};

/// Forward pass over one pair seen from one of its two cameras. When `grad`
/// is set, weight gradients are accumulated into it.
PairRender evaluate_pair(const GaussianModel &model, const TrainingPair &pair, TrainView view, double lambda,
                         const RenderSettings &settings = {}, GaussianModel *grad = nullptr);

/// Loss of rendering `gaussians` against `gt` without a merge branch, and
/// its gradient with respect to every primitive parameter.
LossTerms gaussian_loss(const std::vector<GaussianPrimitive> &gaussians, const CameraModel &camera, const Image &gt,
                        double lambda, const RenderSettings &settings = {},
                        std::vector<GaussianGrad> *grad = nullptr);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    Adam(std::vector<ParamView> params, AdamConfig config = {});
    void step(const std::vector<ParamView> &grads, double learning_rate);
    int steps() const { return t_; }

private:
    std::vector<ParamView> params_;
    std::vector<Eigen::VectorXd> m_;
    std::vector<Eigen::VectorXd> v_;
    AdamConfig config_;
    int t_ = 0;
};

/// Cosine decay from `base` at step 0 to 0 at `total`.
double cosine_learning_rate(double base, int step, int total);

struct TrainConfig {
    int steps = 2000;
    double learning_rate = 2e-3;
    double lambda = 0.05;
    std::uint64_t seed = 0;
    double divergence_factor = 10.0;
    int divergence_patience = 50;
    AdamConfig adam;
    RenderSettings render;
};

struct TrainStep {
    int step = 0;
    double learning_rate = 0.0;
    int pair = 0;
    TrainView view = TrainView::Current;
    LossTerms terms;
};

struct TrainResult {
    std::vector<TrainStep> curve;
};

/// Adam with a cosine schedule; one randomly drawn pair per step, views
/// alternating between the current and previous camera. Throws
/// NumericalError on a non-finite loss or when the loss stays above
/// divergence_factor times the first loss for divergence_patience steps.
TrainResult train(GaussianModel &model, const std::vector<TrainingPair> &pairs, const TrainConfig &config,
                  const std::function<void(const TrainStep &)> &progress = {});

/// Mean loss terms over every pair and both views.
LossTerms mean_loss(const GaussianModel &model, const std::vector<TrainingPair> &pairs, double lambda,
                    const RenderSettings &settings = {});

void write_checkpoint(const std::filesystem::path &path, GaussianModel &model);
/// Loads into a model of matching configuration; names and shapes must agree.
void read_checkpoint(const std::filesystem::path &path, GaussianModel &model);

void write_loss_csv(const std::filesystem::path &path, const TrainResult &result);

} // namespace streamsplat
