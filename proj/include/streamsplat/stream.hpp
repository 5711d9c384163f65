// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include "streamsplat/descriptors.hpp"
#include "streamsplat/oracle.hpp"

namespace streamsplat {

/// Frames plus the coarse predictor and matching head for them.
class FrameSource {
public:
    virtual ~FrameSource() = default;

    /// Frames in processing order.
    virtual std::vector<int> frame_ids() const = 0;
    virtual int height() const = 0;
    virtual int width() const = 0;
    virtual Image image(int frame) const = 0;
    /// X^{a|a}, X^{b|a} and their confidences.
    virtual oracle::PointMapPair predict_pointmaps(int a, int b) const = 0;
    virtual DescriptorMap predict_descriptors(int frame) const = 0;
};

/// Context frames 0, r, 2r, ... of a stream of `frames` frames.
std::vector<int> context_frames(int frames, int ratio);
/// Midpoints between consecutive context frames (empty for ratio < 2).
std::vector<int> test_frames(int frames, int ratio);

class OracleSource : public FrameSource {
public:
    OracleSource(const oracle::SyntheticStream &stream, std::vector<int> frames);

    std::vector<int> frame_ids() const override { return frames_; }
    int height() const override { return stream_->config().height; }
    int width() const override { return stream_->config().width; }
    Image image(int frame) const override { return stream_->image(frame); }
    oracle::PointMapPair predict_pointmaps(int a, int b) const override { return stream_->predict_pointmaps(a, b); }
    DescriptorMap predict_descriptors(int frame) const override { return stream_->predict_descriptors(frame); }

private:
    const oracle::SyntheticStream *stream_;
    std::vector<int> frames_;
};

void write_descriptors(const std::filesystem::path &path, const DescriptorMap &map);
DescriptorMap read_descriptors(const std::filesystem::path &path);

struct PoseRecord {
    int frame_id = 0;
    Pose3d pose;
    double focal = 0.0;
};

/// One JSON object per line: {frame_id, quaternion [w,x,y,z], translation, focal}.
void write_pose_records(const std::filesystem::path &path, const std::vector<PoseRecord> &poses);
std::vector<PoseRecord> read_pose_records(const std::filesystem::path &path);

/// Writes every image, the ground-truth poses and, for the context frames,
/// the predictor outputs a run needs: the (c0, c0) pair, both orders of
/// each adjacent context pair, and per-frame descriptors. Frames strictly
/// between the first and last context frame that are not context frames are
/// listed as test frames.
void write_stream_directory(const std::filesystem::path &dir, const oracle::SyntheticStream &stream,
                            const std::vector<int> &context);

/// Reads a directory written by write_stream_directory.
class DirectorySource : public FrameSource {
public:
    explicit DirectorySource(std::filesystem::path dir);

    std::vector<int> frame_ids() const override { return context_; }
    int height() const override { return height_; }
    int width() const override { return width_; }
    Image image(int frame) const override;
    oracle::PointMapPair predict_pointmaps(int a, int b) const override;
    DescriptorMap predict_descriptors(int frame) const override;

    const std::vector<int> &all_frames() const { return frames_; }
    const std::vector<int> &test_frames() const { return test_; }
    const std::map<int, PoseRecord> &ground_truth() const { return truth_; }

private:
    std::filesystem::path dir_;
    int height_ = 0;
    int width_ = 0;
    std::vector<int> frames_;
    std::vector<int> context_;
    std::vector<int> test_;
    std::map<int, PoseRecord> truth_;
};

} // namespace streamsplat
