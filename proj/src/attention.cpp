#include "tdm/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tdm {

QkvTriple project_qkv(const FrameTokens& frame, const ProjectionWeights& w) {
    if (frame.tokens.shape[1] != w.d_model())
        throw std::invalid_argument("project_qkv: token dim does not match projection input dim");
    return {matmul(frame.tokens, w.w_q), matmul(frame.tokens, w.w_k), matmul(frame.tokens, w.w_v)};
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw std::invalid_argument("attend: rank-2 inputs required");
    if (k.shape[0] != v.shape[0] || q.shape[1] != k.shape[1])
        throw std::invalid_argument("attend: incompatible Q/K/V shapes");
    for (const Tensor* t : {&q, &k, &v})
        for (double x : t->data)
            if (!std::isfinite(x)) throw std::invalid_argument("attend: non-finite input");

    const int l = q.shape[0], m = k.shape[0], d = q.shape[1], dv = v.shape[1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor out({l, dv});
    std::vector<double> logits(m);
    for (int i = 0; i < l; ++i) {
        double maxlog = -1e300;
        for (int j = 0; j < m; ++j) {
            double s = 0.0;
            for (int c = 0; c < d; ++c) s += q.at(i, c) * k.at(j, c);
            logits[j] = s * scale;
            maxlog = std::max(maxlog, logits[j]);
        }
        double denom = 0.0;
        for (int j = 0; j < m; ++j) {
            logits[j] = std::exp(logits[j] - maxlog);
            denom += logits[j];
        }
        for (int j = 0; j < m; ++j) {
            const double wgt = logits[j] / denom;
            for (int c = 0; c < dv; ++c) out.at(i, c) += wgt * v.at(j, c);
        }
    }
    return out;
}

KvPair first_frame_kv(const std::vector<FrameTokens>& video, const ProjectionWeights& w, int i) {
    if (video.empty()) throw std::invalid_argument("first_frame_kv: empty video");
    if (i < 0 || i >= static_cast<int>(video.size()))
        throw std::invalid_argument("first_frame_kv: frame index out of range");
    return {matmul(video[0].tokens, w.w_k), matmul(video[0].tokens, w.w_v)};
}

KvPair sw_cfa_kv(const std::vector<FrameTokens>& video, const ProjectionWeights& w, int i, int n) {
    if (video.empty()) throw std::invalid_argument("sw_cfa_kv: empty video");
    const int frames = static_cast<int>(video.size());
    if (i < 0 || i >= frames) throw std::invalid_argument("sw_cfa_kv: frame index out of range");
    if (n < 0) throw std::invalid_argument("sw_cfa_kv: window radius must be >= 0");

    const int lo = std::max(0, i - n);
    const int hi = std::min(frames - 1, i + n);

    KvPair kv{matmul(video[lo].tokens, w.w_k), matmul(video[lo].tokens, w.w_v)};
    for (int j = lo + 1; j <= hi; ++j) {
        kv.k += matmul(video[j].tokens, w.w_k);
        kv.v += matmul(video[j].tokens, w.w_v);
    }
    const double inv = 1.0 / static_cast<double>(hi - lo + 1);
    kv.k *= inv;
    kv.v *= inv;
    return kv;
}

Tensor cross_frame_attend(const std::vector<FrameTokens>& video, const ProjectionWeights& w,
                          const AttentionMode& mode, int i) {
    if (video.empty()) throw std::invalid_argument("cross_frame_attend: empty video");
    if (i < 0 || i >= static_cast<int>(video.size()))
        throw std::invalid_argument("cross_frame_attend: frame index out of range");

    const Tensor q = matmul(video[i].tokens, w.w_q);
    KvPair kv;
    switch (mode.variant) {
        case AttentionVariant::SelfAttention:
            kv = {matmul(video[i].tokens, w.w_k), matmul(video[i].tokens, w.w_v)};
            break;
        case AttentionVariant::FirstFrameCfa:
            kv = first_frame_kv(video, w, i);
            break;
        case AttentionVariant::SlidingWindowCfa:
            kv = sw_cfa_kv(video, w, i, mode.window_radius);
            break;
    }
    return attend(q, kv.k, kv.v);
}

}  // namespace tdm
