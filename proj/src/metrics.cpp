#include "tdm/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tdm {

FlowField FlowField::constant(int h, int w, double dx, double dy) {
    FlowField f(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            f.data.at(y, x, 0) = dx;
            f.data.at(y, x, 1) = dy;
        }
    return f;
}

double frame_consistency(const FrameSequence& video) {
    if (video.n_frames() < 2)
        throw std::invalid_argument("frame_consistency: need at least 2 frames");

    double acc = 0.0;
    for (int i = 0; i + 1 < video.n_frames(); ++i) {
        const Tensor& a = video.frames[i];
        const Tensor& b = video.frames[i + 1];
        check_same_shape(a, b, "frame_consistency");
        const std::size_t n = a.numel();
        double ma = 0.0, mb = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            ma += a.data[k];
            mb += b.data[k];
        }
        ma /= static_cast<double>(n);
        mb /= static_cast<double>(n);
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double ca = a.data[k] - ma, cb = b.data[k] - mb;
            dot += ca * cb;
            na += ca * ca;
            nb += cb * cb;
        }
        if (na == 0.0 || nb == 0.0) {
            // constant frame: cosine undefined; equal constants count as 1
            acc += (na == 0.0 && nb == 0.0 && ma == mb) ? 1.0 : 0.0;
        } else {
            acc += dot / std::sqrt(na * nb);
        }
    }
    return 10.0 * acc / (video.n_frames() - 1);
}

namespace {
// Bilinear sample with either exclusion of out-of-bounds sources or circular wrap.
bool sample_bilinear(const Tensor& img, int c, double y, double x, bool wrap, double* out) {
    const int h = img.shape[1], w = img.shape[2];
    if (wrap) {
        const double fy = std::floor(y), fx = std::floor(x);
        const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
        const double wy = y - fy, wx = x - fx;
        auto px = [&](int yy, int xx) {
            return img.at(c, ((yy % h) + h) % h, ((xx % w) + w) % w);
        };
        *out = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
               wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
        return true;
    }
    if (y < 0.0 || x < 0.0 || y > h - 1 || x > w - 1) return false;
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double wy = y - y0, wx = x - x0;
    *out = (1 - wy) * ((1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1)) +
           wy * ((1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1));
    return true;
}
}  // namespace

double warping_error(const FrameSequence& video, const std::vector<FlowField>& flows, bool wrap) {
    if (video.n_frames() < 2) throw std::invalid_argument("warping_error: need at least 2 frames");
    if (static_cast<int>(flows.size()) != video.n_frames() - 1)
        throw std::invalid_argument("warping_error: flow count must be n_frames - 1");

    double pair_acc = 0.0;
    for (int i = 0; i + 1 < video.n_frames(); ++i) {
        const Tensor& cur = video.frames[i];
        const Tensor& nxt = video.frames[i + 1];
        check_same_shape(cur, nxt, "warping_error");
        const FlowField& fl = flows[i];
        if (fl.height() != cur.shape[1] || fl.width() != cur.shape[2])
            throw std::invalid_argument("warping_error: flow extent mismatch");

        double se = 0.0;
        long count = 0;
        for (int c = 0; c < cur.shape[0]; ++c)
            for (int y = 0; y < cur.shape[1]; ++y)
                for (int x = 0; x < cur.shape[2]; ++x) {
                    double warped = 0.0;
                    if (!sample_bilinear(nxt, c, y + fl.dy(y, x), x + fl.dx(y, x), wrap, &warped))
                        continue;
                    const double d = cur.at(c, y, x) - warped;
                    se += d * d;
                    ++count;
                }
        pair_acc += count > 0 ? se / count : 0.0;
    }
    return 1000.0 * pair_acc / (video.n_frames() - 1);
}

std::vector<FlowField> flows_from_motion_spec(const FrameSequence& video) {
    if (!video.motion_spec) throw std::invalid_argument("clip carries no ground-truth motion");
    const auto& spec = *video.motion_spec;
    if (static_cast<int>(spec.size()) != video.n_frames() - 1)
        throw std::invalid_argument("motion spec length mismatch");
    std::vector<FlowField> flows;
    flows.reserve(spec.size());
    const int h = video.frames[0].shape[1], w = video.frames[0].shape[2];
    for (const auto& v : spec) flows.push_back(FlowField::constant(h, w, v[0], v[1]));
    return flows;
}

FlowField estimate_flow(const Tensor& a, const Tensor& b, int block, int radius) {
    check_same_shape(a, b, "estimate_flow");
    if (a.rank() != 3) throw std::invalid_argument("estimate_flow: rank-3 frames required");
    if (block < 1 || radius < 0) throw std::invalid_argument("estimate_flow: bad block/radius");
    const int c = a.shape[0], h = a.shape[1], w = a.shape[2];

    // candidate displacements sorted by magnitude, then (dx, dy)
    std::vector<std::array<int, 2>> candidates;
    for (int dx = -radius; dx <= radius; ++dx)
        for (int dy = -radius; dy <= radius; ++dy) candidates.push_back({dx, dy});
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const std::array<int, 2>& p, const std::array<int, 2>& q) {
                         const int mp = p[0] * p[0] + p[1] * p[1];
                         const int mq = q[0] * q[0] + q[1] * q[1];
                         if (mp != mq) return mp < mq;
                         return p < q;
                     });

    FlowField flow(h, w);
    for (int by = 0; by < h; by += block)
        for (int bx = 0; bx < w; bx += block) {
            const int ye = std::min(h, by + block), xe = std::min(w, bx + block);
            double best = 1e300;
            std::array<int, 2> best_d{0, 0};
            for (const auto& d : candidates) {
                double sad = 0.0;
                long n = 0;
                for (int ci = 0; ci < c; ++ci)
                    for (int y = by; y < ye; ++y) {
                        const int sy = y + d[1];
                        if (sy < 0 || sy >= h) continue;
                        for (int x = bx; x < xe; ++x) {
                            const int sx = x + d[0];
                            if (sx < 0 || sx >= w) continue;
                            sad += std::fabs(a.at(ci, y, x) - b.at(ci, sy, sx));
                            ++n;
                        }
                    }
                if (n == 0) continue;
                const double mad = sad / n;
                if (mad < best) {
                    best = mad;
                    best_d = d;
                }
            }
            for (int y = by; y < ye; ++y)
                for (int x = bx; x < xe; ++x) {
                    flow.data.at(y, x, 0) = best_d[0];
                    flow.data.at(y, x, 1) = best_d[1];
                }
        }
    return flow;
}

double psnr(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return kPsnrCap;
    return 10.0 * std::log10(1.0 / mse);
}

std::string metrics_csv_header() { return "clip_id,task,mode,FC,WE,PSNR"; }

std::string metrics_csv_line(const std::string& clip_id, const std::string& task,
                             const std::string& mode, const MetricsRow& row) {
    std::ostringstream os;
    os.precision(10);
    os << clip_id << "," << task << "," << mode << "," << row.fc << "," << row.we << ",";
    if (row.has_psnr) os << row.psnr_vs_clean;
    return os.str();
}

}  // namespace tdm
