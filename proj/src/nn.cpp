#include "tdm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "tdm/attention.hpp"

namespace tdm::nn {

namespace {
thread_local int g_no_grad_depth = 0;

Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backfn) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    bool rg = false;
    if (grad_enabled())
        for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backfn = std::move(backfn);
    }
    return n;
}
}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Var leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

Var constant(Tensor v) { return leaf(std::move(v), false); }

Tensor& ensure_grad(const Var& v) {
    if (v->grad.data.empty()) v->grad = Tensor(v->val.shape);
    return v->grad;
}

void accumulate(const Var& v, const Tensor& g) {
    if (!v->requires_grad) return;
    ensure_grad(v) += g;
}

void backward(const Var& root) {
    if (root->val.numel() != 1)
        throw std::invalid_argument("backward: root must be a scalar");

    // Iterative post-order DFS for topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    ensure_grad(root).data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backfn && !n->grad.data.empty()) n->backfn(*n);
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a->val, b->val, "nn::add");
    Tensor out = a->val + b->val;
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        accumulate(a, self.grad);
        accumulate(b, self.grad);
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->val * s;
    return make_op(std::move(out), {a}, [a, s](Node& self) {
        if (!a->requires_grad) return;
        Tensor& g = ensure_grad(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += s * self.grad.data[i];
    });
}

Var mean_of(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("nn::mean_of: empty list");
    Tensor out = xs[0]->val;
    for (std::size_t i = 1; i < xs.size(); ++i) out += xs[i]->val;
    const double inv = 1.0 / static_cast<double>(xs.size());
    out *= inv;
    return make_op(std::move(out), xs, [xs, inv](Node& self) {
        for (const auto& x : xs) {
            if (!x->requires_grad) continue;
            Tensor& g = ensure_grad(x);
            for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += inv * self.grad.data[i];
        }
    });
}

Var matmul_op(const Var& a, const Var& b) {
    Tensor out = matmul(a->val, b->val);
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) ensure_grad(a) += matmul(self.grad, transpose2d(b->val));
        if (b->requires_grad) ensure_grad(b) += matmul(transpose2d(a->val), self.grad);
    });
}

Var silu(const Var& x) {
    Tensor out = x->val;
    for (double& v : out.data) v = v / (1.0 + std::exp(-v));
    return make_op(std::move(out), {x}, [x](Node& self) {
        if (!x->requires_grad) return;
        Tensor& g = ensure_grad(x);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double v = x->val.data[i];
            const double sig = 1.0 / (1.0 + std::exp(-v));
            g.data[i] += self.grad.data[i] * sig * (1.0 + v * (1.0 - sig));
        }
    });
}

Var add_row_vec(const Var& x, const Var& v) {
    if (x->val.rank() != 2 || v->val.rank() != 1 || x->val.shape[1] != v->val.shape[0])
        throw std::invalid_argument("nn::add_row_vec: shape mismatch");
    const int l = x->val.shape[0], d = x->val.shape[1];
    Tensor out = x->val;
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) += v->val.at(j);
    return make_op(std::move(out), {x, v}, [x, v, l, d](Node& self) {
        accumulate(x, self.grad);
        if (!v->requires_grad) return;
        Tensor& g = ensure_grad(v);
        for (int i = 0; i < l; ++i)
            for (int j = 0; j < d; ++j) g.at(j) += self.grad.at(i, j);
    });
}

Var add_channel_vec(const Var& x, const Var& v) {
    if (x->val.rank() != 3 || v->val.rank() != 2 || v->val.shape[0] != 1 ||
        v->val.shape[1] != x->val.shape[0])
        throw std::invalid_argument("nn::add_channel_vec: shape mismatch");
    const int c = x->val.shape[0], h = x->val.shape[1], w = x->val.shape[2];
    Tensor out = x->val;
    for (int ci = 0; ci < c; ++ci) {
        const double bias = v->val.at(0, ci);
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at(ci, y, xx) += bias;
    }
    return make_op(std::move(out), {x, v}, [x, v, c, h, w](Node& self) {
        accumulate(x, self.grad);
        if (!v->requires_grad) return;
        Tensor& g = ensure_grad(v);
        for (int ci = 0; ci < c; ++ci) {
            double s = 0.0;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) s += self.grad.at(ci, y, xx);
            g.at(0, ci) += s;
        }
    });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
    if (x->val.rank() != 2) throw std::invalid_argument("nn::layer_norm: rank-2 input required");
    const int l = x->val.shape[0], d = x->val.shape[1];
    if (gain->val.shape != std::vector<int>{d} || bias->val.shape != std::vector<int>{d})
        throw std::invalid_argument("nn::layer_norm: gain/bias must be length D");
    constexpr double kEps = 1e-6;

    Tensor xhat({l, d});
    std::vector<double> inv_std(l);
    Tensor out({l, d});
    for (int i = 0; i < l; ++i) {
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += x->val.at(i, j);
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = x->val.at(i, j) - mu;
            var += c * c;
        }
        var /= d;
        inv_std[i] = 1.0 / std::sqrt(var + kEps);
        for (int j = 0; j < d; ++j) {
            xhat.at(i, j) = (x->val.at(i, j) - mu) * inv_std[i];
            out.at(i, j) = xhat.at(i, j) * gain->val.at(j) + bias->val.at(j);
        }
    }

    return make_op(std::move(out), {x, gain, bias},
                   [x, gain, bias, xhat, inv_std, l, d](Node& self) {
                       if (gain->requires_grad) {
                           Tensor& gg = ensure_grad(gain);
                           for (int i = 0; i < l; ++i)
                               for (int j = 0; j < d; ++j)
                                   gg.at(j) += self.grad.at(i, j) * xhat.at(i, j);
                       }
                       if (bias->requires_grad) {
                           Tensor& gb = ensure_grad(bias);
                           for (int i = 0; i < l; ++i)
                               for (int j = 0; j < d; ++j) gb.at(j) += self.grad.at(i, j);
                       }
                       if (!x->requires_grad) return;
                       Tensor& gx = ensure_grad(x);
                       for (int i = 0; i < l; ++i) {
                           double mean_a = 0.0, mean_ax = 0.0;
                           for (int j = 0; j < d; ++j) {
                               const double a = self.grad.at(i, j) * gain->val.at(j);
                               mean_a += a;
                               mean_ax += a * xhat.at(i, j);
                           }
                           mean_a /= d;
                           mean_ax /= d;
                           for (int j = 0; j < d; ++j) {
                               const double a = self.grad.at(i, j) * gain->val.at(j);
                               gx.at(i, j) +=
                                   inv_std[i] * (a - mean_a - xhat.at(i, j) * mean_ax);
                           }
                       }
                   });
}

Var attend_op(const Var& q, const Var& k, const Var& v) {
    const int l = q->val.shape[0], m = k->val.shape[0], d = q->val.shape[1];
    const int dv = v->val.shape[1];
    const double scl = 1.0 / std::sqrt(static_cast<double>(d));

    // Forward shares the plain attention kernel; softmax weights are kept for backward.
    Tensor weights({l, m});
    for (int i = 0; i < l; ++i) {
        double maxlog = -1e300;
        for (int j = 0; j < m; ++j) {
            double s = 0.0;
            for (int c = 0; c < d; ++c) s += q->val.at(i, c) * k->val.at(j, c);
            weights.at(i, j) = s * scl;
            maxlog = std::max(maxlog, weights.at(i, j));
        }
        double denom = 0.0;
        for (int j = 0; j < m; ++j) {
            weights.at(i, j) = std::exp(weights.at(i, j) - maxlog);
            denom += weights.at(i, j);
        }
        for (int j = 0; j < m; ++j) weights.at(i, j) /= denom;
    }
    Tensor out = matmul(weights, v->val);

    return make_op(std::move(out), {q, k, v}, [q, k, v, weights, l, m, d, dv, scl](Node& self) {
        if (v->requires_grad) ensure_grad(v) += matmul(transpose2d(weights), self.grad);
        if (!q->requires_grad && !k->requires_grad) return;
        // dS = W o (dW - rowsum(dW o W)), S = QK^T * scl
        Tensor dw = matmul(self.grad, transpose2d(v->val));
        Tensor ds({l, m});
        for (int i = 0; i < l; ++i) {
            double rowdot = 0.0;
            for (int j = 0; j < m; ++j) rowdot += dw.at(i, j) * weights.at(i, j);
            for (int j = 0; j < m; ++j)
                ds.at(i, j) = weights.at(i, j) * (dw.at(i, j) - rowdot);
        }
        ds *= scl;
        if (q->requires_grad) ensure_grad(q) += matmul(ds, k->val);
        if (k->requires_grad) ensure_grad(k) += matmul(transpose2d(ds), q->val);
    });
}

namespace {
void conv2d_shapes(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
                   int& oh, int& ow) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1)
        throw std::invalid_argument("nn::conv2d: bad ranks");
    if (w.shape[1] != x.shape[0] || b.shape[0] != w.shape[0])
        throw std::invalid_argument("nn::conv2d: channel mismatch");
    oh = (x.shape[1] + 2 * pad - w.shape[2]) / stride + 1;
    ow = (x.shape[2] + 2 * pad - w.shape[3]) / stride + 1;
    if (oh < 1 || ow < 1) throw std::invalid_argument("nn::conv2d: empty output");
}
}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    int oh = 0, ow = 0;
    conv2d_shapes(x->val, w->val, b->val, stride, pad, oh, ow);
    const int ic = x->val.shape[0], h = x->val.shape[1], wd = x->val.shape[2];
    const int oc = w->val.shape[0], kh = w->val.shape[2], kw = w->val.shape[3];

    Tensor out({oc, oh, ow});
    for (int o = 0; o < oc; ++o) {
        const double bias = b->val.at(o);
        double* orow = &out.data[static_cast<std::size_t>(o) * oh * ow];
        for (int i = 0; i < oh * ow; ++i) orow[i] = bias;
    }
    for (int o = 0; o < oc; ++o)
        for (int c = 0; c < ic; ++c)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv =
                        w->val.data[((static_cast<std::size_t>(o) * ic + c) * kh + ky) * kw + kx];
                    if (wv == 0.0) continue;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* xr = &x->val.data[(static_cast<std::size_t>(c) * h + iy) * wd];
                        double* yr = &out.data[(static_cast<std::size_t>(o) * oh + oy) * ow];
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= wd) continue;
                            yr[ox] += wv * xr[ix];
                        }
                    }
                }

    return make_op(std::move(out), {x, w, b}, [x, w, b, stride, pad, ic, h, wd, oc, kh, kw, oh,
                                               ow](Node& self) {
        if (b->requires_grad) {
            Tensor& gb = ensure_grad(b);
            for (int o = 0; o < oc; ++o) {
                double s = 0.0;
                const double* gr = &self.grad.data[static_cast<std::size_t>(o) * oh * ow];
                for (int i = 0; i < oh * ow; ++i) s += gr[i];
                gb.at(o) += s;
            }
        }
        const bool need_x = x->requires_grad, need_w = w->requires_grad;
        if (!need_x && !need_w) return;
        Tensor* gx = need_x ? &ensure_grad(x) : nullptr;
        Tensor* gw = need_w ? &ensure_grad(w) : nullptr;
        for (int o = 0; o < oc; ++o)
            for (int c = 0; c < ic; ++c)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const std::size_t widx =
                            ((static_cast<std::size_t>(o) * ic + c) * kh + ky) * kw + kx;
                        const double wv = w->val.data[widx];
                        double dwv = 0.0;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            const double* gr =
                                &self.grad.data[(static_cast<std::size_t>(o) * oh + oy) * ow];
                            const double* xr =
                                &x->val.data[(static_cast<std::size_t>(c) * h + iy) * wd];
                            double* gxr =
                                need_x ? &gx->data[(static_cast<std::size_t>(c) * h + iy) * wd]
                                       : nullptr;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= wd) continue;
                                const double g = gr[ox];
                                if (need_x) gxr[ix] += wv * g;
                                if (need_w) dwv += xr[ix] * g;
                            }
                        }
                        if (need_w) gw->data[widx] += dwv;
                    }
    });
}

Var upsample_nearest2x(const Var& x) {
    if (x->val.rank() != 3) throw std::invalid_argument("nn::upsample: rank-3 input required");
    const int c = x->val.shape[0], h = x->val.shape[1], w = x->val.shape[2];
    Tensor out({c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
                out.at(ci, y, xx) = x->val.at(ci, y / 2, xx / 2);
    return make_op(std::move(out), {x}, [x, c, h, w](Node& self) {
        if (!x->requires_grad) return;
        Tensor& g = ensure_grad(x);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx)
                    g.at(ci, y / 2, xx / 2) += self.grad.at(ci, y, xx);
    });
}

Var spatial_to_tokens(const Var& x) {
    if (x->val.rank() != 3) throw std::invalid_argument("nn::spatial_to_tokens: rank-3 required");
    const int c = x->val.shape[0], h = x->val.shape[1], w = x->val.shape[2];
    Tensor out({h * w, c});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at(y * w + xx, ci) = x->val.at(ci, y, xx);
    return make_op(std::move(out), {x}, [x, c, h, w](Node& self) {
        if (!x->requires_grad) return;
        Tensor& g = ensure_grad(x);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) g.at(ci, y, xx) += self.grad.at(y * w + xx, ci);
    });
}

Var tokens_to_spatial(const Var& x, int h, int w) {
    if (x->val.rank() != 2 || x->val.shape[0] != h * w)
        throw std::invalid_argument("nn::tokens_to_spatial: token count mismatch");
    const int c = x->val.shape[1];
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at(ci, y, xx) = x->val.at(y * w + xx, ci);
    return make_op(std::move(out), {x}, [x, c, h, w](Node& self) {
        if (!x->requires_grad) return;
        Tensor& g = ensure_grad(x);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) g.at(y * w + xx, ci) += self.grad.at(ci, y, xx);
    });
}

Var mse_loss(const Var& pred, const Tensor& target) {
    check_same_shape(pred->val, target, "nn::mse_loss");
    const std::size_t n = pred->val.numel();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred->val.data[i] - target.data[i];
        s += d * d;
    }
    Tensor out({1});
    out.data[0] = s / static_cast<double>(n);
    return make_op(std::move(out), {pred}, [pred, target, n](Node& self) {
        if (!pred->requires_grad) return;
        Tensor& g = ensure_grad(pred);
        const double c = 2.0 * self.grad.data[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            g.data[i] += c * (pred->val.data[i] - target.data[i]);
    });
}

}  // namespace tdm::nn
