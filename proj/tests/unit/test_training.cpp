// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "streamsplat/pipeline.hpp"
#include "streamsplat/training.hpp"
#include "support.hpp"

using namespace streamsplat;

namespace {

Image random_image(std::mt19937_64 &rng, int h, int w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(h, w);
    for (int i = 0; i < img.rgb.size(); ++i) {
        img.rgb.data()[i] = u(rng);
    }
    return img;
}

DecoderConfig tiny_decoder() {
    DecoderConfig c;
    c.feature2d_channels = 3;
    c.hidden = 4;
    return c;
}

/// Training pairs recorded by the pipeline on an 8x8 three-frame stream.
std::vector<TrainingPair> tiny_pairs(const GaussianModel &model) {
    static const oracle::SyntheticStream stream(test::small_stream(8, 3, 8.0));
    const OracleSource source(stream, {0, 1, 2});
    PipelineConfig cfg;
    cfg.record_training_pairs = true;
    return run_pipeline(source, model, cfg).training_pairs;
}

std::vector<GaussianPrimitive> three_gaussians() {
    std::vector<GaussianPrimitive> gs(3);
    gs[0].mu = Vec3d(0.05, -0.02, 2.0);
    gs[0].scale = Vec3d(0.15, 0.1, 0.05);
    gs[0].q = Eigen::Vector4d(0.9, 0.1, -0.2, 0.3).normalized();
    gs[0].opacity = 0.6;
    gs[0].color = Vec3d(0.8, 0.2, 0.3);
    gs[1].mu = Vec3d(-0.2, 0.1, 2.4);
    gs[1].scale = Vec3d(0.12, 0.2, 0.08);
    gs[1].q = Eigen::Vector4d(0.7, -0.3, 0.1, 0.2).normalized();
    gs[1].opacity = 0.45;
    gs[1].color = Vec3d(0.1, 0.7, 0.4);
    gs[2].mu = Vec3d(0.15, 0.2, 2.9);
    gs[2].scale = Vec3d(0.25, 0.15, 0.1);
    gs[2].q = Eigen::Vector4d(0.95, 0.05, 0.05, -0.1).normalized();
    gs[2].opacity = 0.7;
    gs[2].color = Vec3d(0.3, 0.3, 0.9);
    return gs;
}

std::filesystem::path temp_path(const std::string &name) {
    return std::filesystem::temp_directory_path() / ("streamsplat_" + name);
}

} // namespace

TEST(Loss, TermsOfAKnownExample) {
    Image gt(2, 2, 0.5), full(2, 2, 0.5), merged(2, 2, 0.5);
    full.rgb(0, 0) = 0.8;
    merged.rgb(0, 0) = 0.8;
    merged.rgb(3, 2) = 0.1;
    const LossTerms t = compute_loss(gt, full, merged, 0.0);
    EXPECT_NEAR(t.rendering, 0.3, 1e-15);
    EXPECT_NEAR(t.reconstruction, 0.4, 1e-15);
    EXPECT_EQ(t.perceptual, 0.0);
    EXPECT_NEAR(t.total, 0.7, 1e-15);
    EXPECT_THROW(compute_loss(gt, full, merged, 0.1), InvalidArgument);
    EXPECT_THROW(compute_loss(gt, Image(2, 3), merged, 0.0), InvalidArgument);
}

TEST(Loss, PerceptualTermIsOneMinusSsim) {
    std::mt19937_64 rng(1);
    const Image gt = random_image(rng, 12, 12);
    const Image full = random_image(rng, 12, 12);
    const LossTerms t = compute_loss(gt, full, full, 0.3);
    EXPECT_NEAR(t.perceptual, 1.0 - ssim(gt, full), 1e-14);
    EXPECT_EQ(t.reconstruction, 0.0);
    EXPECT_NEAR(t.total, t.rendering + 0.3 * t.perceptual, 1e-14);
}

TEST(Loss, ImageGradientsMatchCentralDifferences) {
    std::mt19937_64 rng(2);
    const Image gt = random_image(rng, 12, 11);
    Image full = random_image(rng, 12, 11);
    Image merged = random_image(rng, 12, 11);
    PointGrid gf, gm;
    compute_loss(gt, full, merged, 0.2, &gf, &gm);
    int good = 0, checked = 0;
    for (Image *img : {&full, &merged}) {
        const PointGrid &g = img == &full ? gf : gm;
        for (int i = 0; i < img->rgb.size(); i += 3) {
            const double saved = img->rgb.data()[i];
            img->rgb.data()[i] = saved + 1e-6;
            const double p = compute_loss(gt, full, merged, 0.2).total;
            img->rgb.data()[i] = saved - 1e-6;
            const double m = compute_loss(gt, full, merged, 0.2).total;
            img->rgb.data()[i] = saved;
            ++checked;
            good += test::relative_error(g.data()[i], (p - m) / 2e-6, 1e-5) < 1e-4 ? 1 : 0;
        }
    }
    EXPECT_EQ(good, checked);
}

TEST(Loss, GaussianGradientsMatchCentralDifferencesAt8x8) {
    std::vector<GaussianPrimitive> gs = three_gaussians();
    const CameraModel cam{Intrinsicsd{8.0, 8, 8}, Pose3d{}};
    std::mt19937_64 rng(3);
    const Image gt = random_image(rng, 8, 8);
    std::vector<GaussianGrad> grads;
    gaussian_loss(gs, cam, gt, 0.0, {}, &grads);
    int good = 0, checked = 0;
    auto check = [&](double &param, double analytic) {
        const double saved = param;
        param = saved + 1e-6;
        const double p = gaussian_loss(gs, cam, gt, 0.0).total;
        param = saved - 1e-6;
        const double m = gaussian_loss(gs, cam, gt, 0.0).total;
        param = saved;
        ++checked;
        good += test::relative_error(analytic, (p - m) / 2e-6, 1e-6) < 1e-4 ? 1 : 0;
    };
    for (std::size_t k = 0; k < gs.size(); ++k) {
        for (int a = 0; a < 3; ++a) {
            check(gs[k].mu(a), grads[k].mu(a));
            check(gs[k].scale(a), grads[k].scale(a));
            check(gs[k].color(a), grads[k].color(a));
        }
        for (int a = 0; a < 4; ++a) {
            check(gs[k].q(a), grads[k].q(a));
        }
        check(gs[k].opacity, grads[k].opacity);
    }
    EXPECT_EQ(checked, 42);
    EXPECT_GE(good, static_cast<int>(std::ceil(0.99 * checked)));
}

TEST(Loss, NetworkGradientsMatchCentralDifferences) {
    GaussianModel model(tiny_decoder());
    model.initialize(4);
    const auto pairs = tiny_pairs(model);
    ASSERT_FALSE(pairs.empty());
    const TrainingPair &pair = pairs.back();
    ASSERT_FALSE(pair.matches.pairs.empty());
    GaussianModel grad(model.config());
    grad.set_zero();
    evaluate_pair(model, pair, TrainView::Current, 0.0, {}, &grad);

    auto params = model.params();
    auto grads = grad.params();
    std::mt19937_64 rng(5);
    int good = 0, checked = 0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        std::uniform_int_distribution<Eigen::Index> pick(0, params[p].size - 1);
        for (int s = 0; s < 12; ++s) {
            const Eigen::Index k = pick(rng);
            const double saved = params[p].data[k];
            params[p].data[k] = saved + 1e-6;
            const double lp = evaluate_pair(model, pair, TrainView::Current, 0.0).terms.total;
            params[p].data[k] = saved - 1e-6;
            const double lm = evaluate_pair(model, pair, TrainView::Current, 0.0).terms.total;
            params[p].data[k] = saved;
            ++checked;
            good += test::relative_error(grads[p].data[k], (lp - lm) / 2e-6, 1e-5) < 1e-4 ? 1 : 0;
        }
    }
    EXPECT_GE(good, static_cast<int>(std::ceil(0.99 * checked))) << good << " of " << checked;
}

TEST(Loss, ZeroOpacityAndZeroLossGiveZeroGeometryGradients) {
    std::vector<GaussianPrimitive> gs = three_gaussians();
    const CameraModel cam{Intrinsicsd{8.0, 8, 8}, Pose3d{}};
    const Image rendered = render(gs, cam).image;
    std::vector<GaussianGrad> grads;
    const LossTerms t = gaussian_loss(gs, cam, rendered, 0.0, {}, &grads);
    EXPECT_EQ(t.total, 0.0);
    for (const auto &g : grads) {
        EXPECT_EQ(g.mu, Vec3d::Zero());
        EXPECT_EQ(g.opacity, 0.0);
    }
    for (auto &g : gs) {
        g.opacity = 0.0;
    }
    gaussian_loss(gs, cam, Image(8, 8, 0.7), 0.0, {}, &grads);
    for (const auto &g : grads) {
        EXPECT_EQ(g.mu, Vec3d::Zero());
        EXPECT_EQ(g.scale, Vec3d::Zero());
        EXPECT_EQ(g.color, Vec3d::Zero());
        EXPECT_NE(g.opacity, 0.0);
    }
}

TEST(Optimizer, ZeroLearningRateLeavesParametersUnchanged) {
    Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
    Eigen::VectorXd g = Eigen::VectorXd::Constant(5, 0.3);
    const Eigen::VectorXd before = x;
    Adam adam({ParamView{"x", x.data(), 5, {5}}});
    adam.step({ParamView{"x", g.data(), 5, {5}}}, 0.0);
    EXPECT_EQ(x, before);
    EXPECT_EQ(adam.steps(), 1);
}

TEST(Optimizer, FirstAdamStepMovesBySignTimesRate) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd g(3);
    g << 2.0, -0.5, 1e-3;
    Adam adam({ParamView{"x", x.data(), 3, {3}}});
    adam.step({ParamView{"x", g.data(), 3, {3}}}, 0.1);
    for (int k = 0; k < 3; ++k) {
        const double expected = -0.1 * g(k) / (std::abs(g(k)) + 1e-8);
        EXPECT_NEAR(x(k), expected, 1e-12);
    }
    Eigen::VectorXd wrong(2);
    EXPECT_THROW(adam.step({ParamView{"x", wrong.data(), 2, {2}}}, 0.1), InvalidArgument);
}

TEST(Optimizer, CosineScheduleEndpoints) {
    EXPECT_DOUBLE_EQ(cosine_learning_rate(0.1, 0, 100), 0.1);
    EXPECT_NEAR(cosine_learning_rate(0.1, 50, 100), 0.05, 1e-15);
    EXPECT_NEAR(cosine_learning_rate(0.1, 100, 100), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(cosine_learning_rate(0.1, 5, 0), 0.1);
}

TEST(Training, RunsAreDeterministicAndReduceTheLoss) {
    GaussianModel a(tiny_decoder()), b(tiny_decoder());
    a.initialize(7);
    b.initialize(7);
    const auto pairs = tiny_pairs(a);
    TrainConfig cfg;
    cfg.steps = 60;
    cfg.learning_rate = 5e-3;
    cfg.lambda = 0.0;
    const LossTerms before = mean_loss(a, pairs, 0.0);
    const TrainResult ra = train(a, pairs, cfg);
    const TrainResult rb = train(b, pairs, cfg);
    ASSERT_EQ(ra.curve.size(), 60u);
    for (std::size_t k = 0; k < ra.curve.size(); ++k) {
        EXPECT_EQ(ra.curve[k].terms.total, rb.curve[k].terms.total);
        EXPECT_EQ(ra.curve[k].pair, rb.curve[k].pair);
        EXPECT_EQ(ra.curve[k].view, k % 2 == 0 ? TrainView::Current : TrainView::Previous);
    }
    EXPECT_EQ(a.decoder.w1, b.decoder.w1);
    EXPECT_LT(mean_loss(a, pairs, 0.0).total, before.total);
}

TEST(Training, DivergenceIsDetected) {
    GaussianModel model(tiny_decoder());
    model.initialize(1);
    const auto pairs = tiny_pairs(model);
    TrainConfig cfg;
    cfg.steps = 20;
    cfg.lambda = 0.0;
    cfg.divergence_factor = 1e-9;
    cfg.divergence_patience = 3;
    int seen = 0;
    EXPECT_THROW(train(model, pairs, cfg, [&](const TrainStep &) { ++seen; }), NumericalError);
    EXPECT_EQ(seen, 3);
    EXPECT_THROW(train(model, {}, cfg), InvalidArgument);
}

TEST(Checkpoint, RoundTripIsFloatExactAndChecksLayout) {
    GaussianModel model(tiny_decoder());
    model.initialize(9);
    const auto path = temp_path("model.sgwt");
    write_checkpoint(path, model);
    GaussianModel back(tiny_decoder());
    back.set_zero();
    read_checkpoint(path, back);
    auto pa = model.params();
    auto pb = back.params();
    for (std::size_t p = 0; p < pa.size(); ++p) {
        for (Eigen::Index k = 0; k < pa[p].size; ++k) {
            EXPECT_EQ(pb[p].data[k], static_cast<double>(static_cast<float>(pa[p].data[k])));
        }
    }
    DecoderConfig other = tiny_decoder();
    other.hidden = 5;
    GaussianModel wrong(other);
    EXPECT_THROW(read_checkpoint(path, wrong), IoError);
    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    EXPECT_EQ(std::string(magic, 4), "SGWT");
    std::filesystem::remove(path);
    EXPECT_THROW(read_checkpoint(path, back), IoError);
}

TEST(Checkpoint, LossCsvHasOneRowPerStep) {
    TrainResult r;
    r.curve.resize(3);
    r.curve[1].step = 1;
    r.curve[2].step = 2;
    const auto path = temp_path("loss.csv");
    write_loss_csv(path, r);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "step,pair,view,learning_rate,total,rendering,perceptual,reconstruction");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 3);
    std::filesystem::remove(path);
}
