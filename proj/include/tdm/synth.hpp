#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tdm/prompts.hpp"
#include "tdm/tensor.hpp"

namespace tdm {

// Ordered clip of C x H x W frames in [0,1]; motion_spec carries the exact
// per-step (dx, dy) translation for synthetic clips.
struct FrameSequence {
    std::vector<Tensor> frames;
    std::optional<std::vector<std::array<int, 2>>> motion_spec;

    int n_frames() const { return static_cast<int>(frames.size()); }
};

enum class CleanPattern { Checker, GradientBlobs, TexturedNoiseField };

CleanPattern pattern_from_name(const std::string& name);
const char* pattern_name(CleanPattern p);

struct DegradationSpec {
    Task task = Task::Denoise;
    double noise_sigma = 0.2;        // denoise
    double haze_strength = 1.0;      // dehaze, beta_h
    double haze_airlight = 0.9;      // dehaze, A
    double rain_density = 0.5;       // derain, streaks per 100 px^2
    double rain_angle_deg = 70.0;    // derain
    int rain_length = 7;             // derain
    int block_size = 8;              // mp4
    double quantization = 0.5;       // mp4, in [0,1]
    int sr_factor = 4;               // sr4
    std::uint64_t seed = 0;
};

DegradationSpec default_spec(Task task, std::uint64_t seed);

FrameSequence generate_clean_video(CleanPattern pattern, int channels, int height, int width,
                                   int n_frames, int dx, int dy, std::uint64_t seed);

FrameSequence degrade(const FrameSequence& clean, const DegradationSpec& spec);

// Frame-directory round trip: frame_%05d.png plus manifest.json; f32 dumps
// are written alongside when requested and preferred on read when present.
void write_clip(const std::string& dir, const FrameSequence& clip, const DegradationSpec* spec,
                bool write_f32);
FrameSequence read_clip(const std::string& dir);

}  // namespace tdm
