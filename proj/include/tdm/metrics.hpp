#pragma once

#include <vector>

#include "tdm/synth.hpp"
#include "tdm/tensor.hpp"

namespace tdm {

// Per-pixel displacement field, H x W x 2 stored as (dx, dy).
struct FlowField {
    Tensor data;  // shape {H, W, 2} flattened into rank-3 tensor

    FlowField() = default;
    FlowField(int h, int w) : data({h, w, 2}) {}
    static FlowField constant(int h, int w, double dx, double dy);

    double dx(int y, int x) const { return data.at(y, x, 0); }
    double dy(int y, int x) const { return data.at(y, x, 1); }
    int height() const { return data.shape[0]; }
    int width() const { return data.shape[1]; }
};

// Mean cosine similarity between consecutive centered frame vectors, x10.
double frame_consistency(const FrameSequence& video);

// Mean squared error after warping each next frame back onto the current one,
// x1000. With wrap=false, warp sources outside the frame are excluded from
// the mean; wrap=true samples circularly (no invalid pixels), matching
// circularly translated clips.
double warping_error(const FrameSequence& video, const std::vector<FlowField>& flows,
                     bool wrap = false);

// Ground-truth constant flows from a synthetic clip's motion spec.
std::vector<FlowField> flows_from_motion_spec(const FrameSequence& video);

inline constexpr int kDefaultFlowBlock = 7;
inline constexpr int kDefaultFlowRadius = 4;

// Exhaustive per-block SAD search; ties break toward smaller displacement
// magnitude, then lexicographic (dx, dy).
FlowField estimate_flow(const Tensor& a, const Tensor& b, int block = kDefaultFlowBlock,
                        int radius = kDefaultFlowRadius);

inline constexpr double kPsnrCap = 99.0;

double psnr(const Tensor& a, const Tensor& b);

struct MetricsRow {
    double fc = 0.0;
    double we = 0.0;
    double psnr_vs_clean = 0.0;
    bool has_psnr = false;
};

std::string metrics_csv_header();
std::string metrics_csv_line(const std::string& clip_id, const std::string& task,
                             const std::string& mode, const MetricsRow& row);

}  // namespace tdm
