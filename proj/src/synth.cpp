#include "tdm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tdm/image_io.hpp"
#include "tdm/rng.hpp"

namespace fs = std::filesystem;

namespace tdm {

CleanPattern pattern_from_name(const std::string& name) {
    if (name == "checker") return CleanPattern::Checker;
    if (name == "gradient-blobs") return CleanPattern::GradientBlobs;
    if (name == "textured-noise-field") return CleanPattern::TexturedNoiseField;
    throw std::invalid_argument("unknown pattern: " + name);
}

const char* pattern_name(CleanPattern p) {
    switch (p) {
        case CleanPattern::Checker: return "checker";
        case CleanPattern::GradientBlobs: return "gradient-blobs";
        case CleanPattern::TexturedNoiseField: return "textured-noise-field";
    }
    throw std::invalid_argument("unknown pattern");
}

DegradationSpec default_spec(Task task, std::uint64_t seed) {
    DegradationSpec s;
    s.task = task;
    s.seed = seed;
    return s;
}

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

Tensor base_frame(CleanPattern pattern, int channels, int h, int w, Rng& rng) {
    Tensor f({channels, h, w});
    switch (pattern) {
        case CleanPattern::Checker: {
            const int cell = 4 + rng.uniform_int(0, 4);
            std::vector<double> c0(channels), c1(channels);
            for (int c = 0; c < channels; ++c) {
                c0[c] = rng.uniform(0.0, 0.45);
                c1[c] = rng.uniform(0.55, 1.0);
            }
            for (int c = 0; c < channels; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        f.at(c, y, x) = ((y / cell + x / cell) % 2 == 0) ? c0[c] : c1[c];
            break;
        }
        case CleanPattern::GradientBlobs: {
            const int blobs = 6;
            std::vector<double> cx(blobs), cy(blobs), sg(blobs);
            std::vector<std::vector<double>> amp(blobs, std::vector<double>(channels));
            for (int b = 0; b < blobs; ++b) {
                cx[b] = rng.uniform(0.0, w);
                cy[b] = rng.uniform(0.0, h);
                sg[b] = rng.uniform(0.08, 0.25) * std::min(h, w);
                for (int c = 0; c < channels; ++c) amp[b][c] = rng.uniform(0.2, 1.0);
            }
            for (int c = 0; c < channels; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double v = 0.15 * (static_cast<double>(x) / w + static_cast<double>(y) / h);
                        for (int b = 0; b < blobs; ++b) {
                            // closest periodic replica keeps circular shifts seamless
                            double ddx = std::fabs(x - cx[b]);
                            double ddy = std::fabs(y - cy[b]);
                            ddx = std::min(ddx, w - ddx);
                            ddy = std::min(ddy, h - ddy);
                            v += amp[b][c] * std::exp(-(ddx * ddx + ddy * ddy) / (2 * sg[b] * sg[b]));
                        }
                        f.at(c, y, x) = clamp01(v);
                    }
            break;
        }
        case CleanPattern::TexturedNoiseField: {
            // seeded white noise smoothed by a 3x3 box, circularly
            Tensor raw({channels, h, w});
            rng.fill_uniform(raw, 0.0, 1.0);
            for (int c = 0; c < channels; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double s = 0.0;
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx)
                                s += raw.at(c, (y + dy + h) % h, (x + dx + w) % w);
                        f.at(c, y, x) = s / 9.0;
                    }
            break;
        }
    }
    return f;
}

Tensor circular_shift(const Tensor& src, int sx, int sy) {
    const int c = src.shape[0], h = src.shape[1], w = src.shape[2];
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at(ci, y, x) = src.at(ci, ((y - sy) % h + h) % h, ((x - sx) % w + w) % w);
    return out;
}

}  // namespace

FrameSequence generate_clean_video(CleanPattern pattern, int channels, int height, int width,
                                   int n_frames, int dx, int dy, std::uint64_t seed) {
    if (n_frames < 1) throw std::invalid_argument("generate_clean_video: n_frames must be >= 1");
    const int limit = std::min(height, width) / n_frames;
    if (std::abs(dx) > limit || std::abs(dy) > limit)
        throw std::invalid_argument("generate_clean_video: velocity too large for clip length");

    Rng rng(mix_seed(seed, 0xc1ea0ULL));
    const Tensor f0 = base_frame(pattern, channels, height, width, rng);

    FrameSequence seq;
    seq.frames.reserve(n_frames);
    for (int t = 0; t < n_frames; ++t) seq.frames.push_back(circular_shift(f0, t * dx, t * dy));
    std::vector<std::array<int, 2>> flow(std::max(0, n_frames - 1), {dx, dy});
    seq.motion_spec = std::move(flow);
    return seq;
}

namespace {

Tensor degrade_noise(const Tensor& f, double sigma, Rng& rng) {
    if (sigma == 0.0) return f;
    Tensor out = f;
    for (double& v : out.data) v = clamp01(v + sigma * rng.normal());
    return out;
}

Tensor degrade_haze(const Tensor& f, double beta_h, double airlight) {
    if (beta_h == 0.0) return f;
    const int c = f.shape[0], h = f.shape[1], w = f.shape[2];
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                // fixed synthetic depth ramp over the diagonal, in [0,1]
                const double depth =
                    (static_cast<double>(x) / (w - 1) + static_cast<double>(y) / (h - 1)) / 2.0;
                const double trans = std::exp(-beta_h * depth);
                out.at(ci, y, x) = clamp01(f.at(ci, y, x) * trans + airlight * (1.0 - trans));
            }
    return out;
}

Tensor degrade_rain(const Tensor& f, const DegradationSpec& spec, Rng& rng) {
    if (spec.rain_density == 0.0) return f;
    const int c = f.shape[0], h = f.shape[1], w = f.shape[2];
    Tensor out = f;
    const int streaks =
        static_cast<int>(spec.rain_density * static_cast<double>(h) * w / 100.0 + 0.5);
    const double angle = spec.rain_angle_deg * M_PI / 180.0;
    for (int s = 0; s < streaks; ++s) {
        const double x0 = rng.uniform(0.0, w);
        const double y0 = rng.uniform(0.0, h);
        const double jitter = rng.uniform(-0.08, 0.08);
        const double dirx = std::cos(angle + jitter);
        const double diry = std::sin(angle + jitter);
        const double gain = rng.uniform(0.25, 0.6);
        for (int k = 0; k < spec.rain_length; ++k) {
            const int px = static_cast<int>(x0 + k * dirx);
            const int py = static_cast<int>(y0 + k * diry);
            if (px < 0 || px >= w || py < 0 || py >= h) continue;
            for (int ci = 0; ci < c; ++ci)
                out.at(ci, py, px) = clamp01(out.at(ci, py, px) + gain);
        }
    }
    return out;
}

Tensor degrade_mp4(const Tensor& f, int block, double q) {
    if (q == 0.0) return f;
    const int c = f.shape[0], h = f.shape[1], w = f.shape[2];
    Tensor post({c, h, w});
    const double step = 0.5 * q;
    for (int ci = 0; ci < c; ++ci)
        for (int by = 0; by < h; by += block)
            for (int bx = 0; bx < w; bx += block) {
                const int ye = std::min(h, by + block), xe = std::min(w, bx + block);
                double mean = 0.0;
                for (int y = by; y < ye; ++y)
                    for (int x = bx; x < xe; ++x) mean += f.at(ci, y, x);
                mean /= (ye - by) * (xe - bx);
                for (int y = by; y < ye; ++y)
                    for (int x = bx; x < xe; ++x) {
                        const double r = f.at(ci, y, x) - mean;
                        post.at(ci, y, x) = mean + std::round(r / step) * step;
                    }
            }
    // light ringing along both axes
    Tensor out({c, h, w});
    const double k0 = 1.0 + 0.2 * q, k1 = -0.1 * q;
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double left = post.at(ci, y, std::max(0, x - 1));
                const double right = post.at(ci, y, std::min(w - 1, x + 1));
                const double up = post.at(ci, std::max(0, y - 1), x);
                const double down = post.at(ci, std::min(h - 1, y + 1), x);
                out.at(ci, y, x) =
                    clamp01(k0 * post.at(ci, y, x) + k1 * (left + right + up + down) / 2.0);
            }
    return out;
}

Tensor degrade_sr4(const Tensor& f, int factor) {
    const int c = f.shape[0], h = f.shape[1], w = f.shape[2];
    if (h % factor != 0 || w % factor != 0)
        throw std::invalid_argument("degrade sr: frame extent not divisible by factor");
    const int lh = h / factor, lw = w / factor;
    Tensor low({c, lh, lw});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < lh; ++y)
            for (int x = 0; x < lw; ++x) {
                double s = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        s += f.at(ci, y * factor + dy, x * factor + dx);
                low.at(ci, y, x) = s / (factor * factor);
            }
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ci, y, x) = low.at(ci, y / factor, x / factor);
    return out;
}

}  // namespace

FrameSequence degrade(const FrameSequence& clean, const DegradationSpec& spec) {
    if (spec.noise_sigma < 0.0 || spec.haze_strength < 0.0 || spec.rain_density < 0.0 ||
        spec.quantization < 0.0 || spec.quantization > 1.0 || spec.block_size < 1 ||
        spec.rain_length < 1 || spec.sr_factor < 1)
        throw std::invalid_argument("degrade: spec parameter out of range");

    FrameSequence out;
    out.motion_spec = clean.motion_spec;
    out.frames.reserve(clean.frames.size());
    Rng rng(mix_seed(spec.seed, 0xde60ULL + static_cast<std::uint64_t>(spec.task)));
    for (const Tensor& f : clean.frames) {
        switch (spec.task) {
            case Task::Denoise: out.frames.push_back(degrade_noise(f, spec.noise_sigma, rng)); break;
            case Task::Dehaze:
                out.frames.push_back(degrade_haze(f, spec.haze_strength, spec.haze_airlight));
                break;
            case Task::Derain: out.frames.push_back(degrade_rain(f, spec, rng)); break;
            case Task::Mp4:
                out.frames.push_back(degrade_mp4(f, spec.block_size, spec.quantization));
                break;
            case Task::Sr4: out.frames.push_back(degrade_sr4(f, spec.sr_factor)); break;
        }
    }
    return out;
}

namespace {
nlohmann::json spec_to_json(const DegradationSpec& s) {
    return {{"task", task_name(s.task)},
            {"noise_sigma", s.noise_sigma},
            {"haze_strength", s.haze_strength},
            {"haze_airlight", s.haze_airlight},
            {"rain_density", s.rain_density},
            {"rain_angle_deg", s.rain_angle_deg},
            {"rain_length", s.rain_length},
            {"block_size", s.block_size},
            {"quantization", s.quantization},
            {"sr_factor", s.sr_factor},
            {"seed", s.seed}};
}
}  // namespace

void write_clip(const std::string& dir, const FrameSequence& clip, const DegradationSpec* spec,
                bool write_f32_dumps) {
    if (clip.frames.empty()) throw std::invalid_argument("write_clip: empty clip");
    fs::create_directories(dir);
    char name[32];
    for (int i = 0; i < clip.n_frames(); ++i) {
        std::snprintf(name, sizeof(name), "frame_%05d.png", i);
        write_png(dir + "/" + name, clip.frames[i]);
        if (write_f32_dumps) {
            std::snprintf(name, sizeof(name), "frame_%05d.f32", i);
            write_f32(dir + "/" + name, clip.frames[i]);
        }
    }

    nlohmann::json manifest;
    const Tensor& f0 = clip.frames[0];
    manifest["shape"] = {f0.shape[0], f0.shape[1], f0.shape[2]};
    manifest["n_frames"] = clip.n_frames();
    if (spec) {
        manifest["task"] = task_name(spec->task);
        manifest["spec"] = spec_to_json(*spec);
        manifest["seed"] = spec->seed;
    }
    if (clip.motion_spec) {
        nlohmann::json flow = nlohmann::json::array();
        for (const auto& v : *clip.motion_spec) flow.push_back({v[0], v[1]});
        manifest["flow"] = flow;
    }
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw std::runtime_error("write_clip: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

FrameSequence read_clip(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw std::runtime_error("read_clip: missing manifest.json in " + dir);
    nlohmann::json manifest;
    in >> manifest;

    const int n = manifest.at("n_frames").get<int>();
    std::vector<int> shape = manifest.at("shape").get<std::vector<int>>();

    FrameSequence clip;
    clip.frames.reserve(n);
    char name[32];
    for (int i = 0; i < n; ++i) {
        std::snprintf(name, sizeof(name), "frame_%05d.f32", i);
        const std::string f32_path = dir + "/" + name;
        if (fs::exists(f32_path)) {
            clip.frames.push_back(read_f32(f32_path, shape));
        } else {
            std::snprintf(name, sizeof(name), "frame_%05d.png", i);
            clip.frames.push_back(read_png(dir + "/" + name));
        }
    }
    if (manifest.contains("flow")) {
        std::vector<std::array<int, 2>> flow;
        for (const auto& v : manifest["flow"]) flow.push_back({v[0].get<int>(), v[1].get<int>()});
        clip.motion_spec = std::move(flow);
    }
    return clip;
}

}  // namespace tdm
