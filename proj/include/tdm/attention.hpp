#pragma once

#include <vector>

#include "tdm/tensor.hpp"

namespace tdm {

// Query/key/value projection matrices, each d_model x d, row-per-token convention.
struct ProjectionWeights {
    Tensor w_q;
    Tensor w_k;
    Tensor w_v;
    int d_model() const { return w_q.shape[0]; }
    int d() const { return w_q.shape[1]; }
};

enum class AttentionVariant { SelfAttention, FirstFrameCfa, SlidingWindowCfa };

struct AttentionMode {
    AttentionVariant variant = AttentionVariant::SelfAttention;
    int window_radius = 3;

    static AttentionMode self_attention() { return {AttentionVariant::SelfAttention, 0}; }
    static AttentionMode first_frame() { return {AttentionVariant::FirstFrameCfa, 0}; }
    static AttentionMode sliding_window(int radius) {
        if (radius < 0) throw std::invalid_argument("window_radius must be >= 0");
        return {AttentionVariant::SlidingWindowCfa, radius};
    }
};

// One frame's flattened spatial tokens: L x d_model matrix.
struct FrameTokens {
    Tensor tokens;
    int frame_index = 0;
};

struct QkvTriple {
    Tensor q, k, v;
};

struct KvPair {
    Tensor k, v;
};

QkvTriple project_qkv(const FrameTokens& frame, const ProjectionWeights& w);

// Softmax(Q K^T / sqrt(d)) V with row-wise softmax.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v);

// Keys/values always taken from frame 0 regardless of i.
KvPair first_frame_kv(const std::vector<FrameTokens>& video, const ProjectionWeights& w, int i);

// Keys/values averaged over the clipped window [i-N, i+N], renormalized by the
// true window size at sequence edges.
KvPair sw_cfa_kv(const std::vector<FrameTokens>& video, const ProjectionWeights& w, int i, int n);

Tensor cross_frame_attend(const std::vector<FrameTokens>& video, const ProjectionWeights& w,
                          const AttentionMode& mode, int i);

}  // namespace tdm
