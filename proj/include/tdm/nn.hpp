#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tdm/tensor.hpp"

namespace tdm::nn {

// Reverse-mode autograd over whole tensors. Nodes that do not require
// gradients drop their parent links at construction, so inference builds no
// backward graph and frozen parameters never accumulate gradients.
struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backfn;
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor v, bool requires_grad = false);
Var constant(Tensor v);

// Disables graph recording for the current thread while alive.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

Tensor& ensure_grad(const Var& v);
void accumulate(const Var& v, const Tensor& g);

// Seeds root->grad with ones and runs reverse topological backprop.
void backward(const Var& root);

Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var mean_of(const std::vector<Var>& xs);  // elementwise mean, fixed order
Var matmul_op(const Var& a, const Var& b);
Var silu(const Var& x);

// y[i,:] = x[i,:] + v[:], v is rank-1.
Var add_row_vec(const Var& x, const Var& v);
// y[c,:,:] = x[c,:,:] + v[0,c], v is 1 x C.
Var add_channel_vec(const Var& x, const Var& v);

// Per-row layer norm over the last dim of an L x D matrix.
Var layer_norm(const Var& x, const Var& gain, const Var& bias);

// Fused Softmax(Q K^T / sqrt(d)) V.
Var attend_op(const Var& q, const Var& k, const Var& v);

// x: IC x H x W, w: OC x IC x KH x KW, b: OC.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2x(const Var& x);

// C x H x W  <->  (H*W) x C token matrix.
Var spatial_to_tokens(const Var& x);
Var tokens_to_spatial(const Var& x, int h, int w);

// mean((pred - target)^2), target constant; returns a scalar (shape {1}).
Var mse_loss(const Var& pred, const Tensor& target);

}  // namespace tdm::nn
