#include "tdm/denoiser.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tdm/rng.hpp"

namespace tdm {

using nn::Var;

namespace {

struct ParamBuilder {
    DenoiserModel* model;
    Rng* rng;
    bool trainable = false;

    Var tensor(const std::string& name, std::vector<int> shape, double stddev) {
        Tensor t(std::move(shape));
        if (stddev > 0.0) rng->fill_normal(t, stddev);
        return reg(name, std::move(t));
    }
    Var zeros(const std::string& name, std::vector<int> shape) {
        return reg(name, Tensor(std::move(shape)));
    }
    Var ones(const std::string& name, std::vector<int> shape) {
        return reg(name, Tensor(std::move(shape), 1.0));
    }
    Var copy_of(const std::string& name, const Var& src) { return reg(name, src->val); }

    Var reg(const std::string& name, Tensor t) {
        Var v = nn::leaf(std::move(t), trainable);
        model->params.push_back({name, v});
        if (trainable) model->control_vars.push_back(v);
        return v;
    }
};

double conv_std(int fan_in) { return std::sqrt(2.0 / fan_in); }

ResBlockWeights make_resblock(ParamBuilder& pb, const std::string& prefix, int ch, int temb_dim) {
    ResBlockWeights rb;
    rb.conv1_w = pb.tensor(prefix + ".conv1.w", {ch, ch, 3, 3}, conv_std(ch * 9));
    rb.conv1_b = pb.zeros(prefix + ".conv1.b", {ch});
    rb.temb_w = pb.tensor(prefix + ".temb.w", {temb_dim, ch}, 1.0 / std::sqrt(temb_dim));
    rb.temb_b = pb.zeros(prefix + ".temb.b", {1, ch});
    rb.conv2_w = pb.tensor(prefix + ".conv2.w", {ch, ch, 3, 3}, conv_std(ch * 9));
    rb.conv2_b = pb.zeros(prefix + ".conv2.b", {ch});
    return rb;
}

TransformerBlockWeights make_transformer(ParamBuilder& pb, const std::string& prefix, int ch,
                                         int d_attn, int d_prompt) {
    TransformerBlockWeights tb;
    const double sa = 1.0 / std::sqrt(static_cast<double>(ch));
    const double so = 1.0 / std::sqrt(static_cast<double>(d_attn));
    const double sp = 1.0 / std::sqrt(static_cast<double>(d_prompt));
    tb.ln1_g = pb.ones(prefix + ".ln1.g", {ch});
    tb.ln1_b = pb.zeros(prefix + ".ln1.b", {ch});
    tb.attn_wq = pb.tensor(prefix + ".attn.wq", {ch, d_attn}, sa);
    tb.attn_wk = pb.tensor(prefix + ".attn.wk", {ch, d_attn}, sa);
    tb.attn_wv = pb.tensor(prefix + ".attn.wv", {ch, d_attn}, sa);
    tb.attn_wo = pb.tensor(prefix + ".attn.wo", {d_attn, ch}, so);
    tb.ln2_g = pb.ones(prefix + ".ln2.g", {ch});
    tb.ln2_b = pb.zeros(prefix + ".ln2.b", {ch});
    tb.cross_wq = pb.tensor(prefix + ".cross.wq", {ch, d_attn}, sa);
    tb.cross_wk = pb.tensor(prefix + ".cross.wk", {d_prompt, d_attn}, sp);
    tb.cross_wv = pb.tensor(prefix + ".cross.wv", {d_prompt, d_attn}, sp);
    tb.cross_wo = pb.tensor(prefix + ".cross.wo", {d_attn, ch}, so);
    tb.ln3_g = pb.ones(prefix + ".ln3.g", {ch});
    tb.ln3_b = pb.zeros(prefix + ".ln3.b", {ch});
    tb.ffn_w1 = pb.tensor(prefix + ".ffn.w1", {ch, 2 * ch}, sa);
    tb.ffn_b1 = pb.zeros(prefix + ".ffn.b1", {2 * ch});
    tb.ffn_w2 = pb.tensor(prefix + ".ffn.w2", {2 * ch, ch}, 1.0 / std::sqrt(2.0 * ch));
    tb.ffn_b2 = pb.zeros(prefix + ".ffn.b2", {ch});
    return tb;
}

EncoderWeights make_encoder(ParamBuilder& pb, const std::string& prefix, const DenoiserDims& d) {
    EncoderWeights e;
    e.conv_in_w = pb.tensor(prefix + ".conv_in.w", {d.ch1, d.latent_channels(), 3, 3},
                            conv_std(d.latent_channels() * 9));
    e.conv_in_b = pb.zeros(prefix + ".conv_in.b", {d.ch1});
    e.rb1 = make_resblock(pb, prefix + ".rb1", d.ch1, d.temb_dim);
    e.tb1 = make_transformer(pb, prefix + ".tb1", d.ch1, d.d_attn, d.d_prompt);
    e.down_w = pb.tensor(prefix + ".down.w", {d.ch2, d.ch1, 3, 3}, conv_std(d.ch1 * 9));
    e.down_b = pb.zeros(prefix + ".down.b", {d.ch2});
    e.rb2 = make_resblock(pb, prefix + ".rb2", d.ch2, d.temb_dim);
    e.tb2 = make_transformer(pb, prefix + ".tb2", d.ch2, d.d_attn, d.d_prompt);
    e.rb_mid = make_resblock(pb, prefix + ".rb_mid", d.ch2, d.temb_dim);
    return e;
}

EncoderWeights copy_encoder(ParamBuilder& pb, const std::string& prefix,
                            const EncoderWeights& src) {
    EncoderWeights e;
    auto rb = [&](const std::string& p, const ResBlockWeights& s) {
        ResBlockWeights r;
        r.conv1_w = pb.copy_of(p + ".conv1.w", s.conv1_w);
        r.conv1_b = pb.copy_of(p + ".conv1.b", s.conv1_b);
        r.temb_w = pb.copy_of(p + ".temb.w", s.temb_w);
        r.temb_b = pb.copy_of(p + ".temb.b", s.temb_b);
        r.conv2_w = pb.copy_of(p + ".conv2.w", s.conv2_w);
        r.conv2_b = pb.copy_of(p + ".conv2.b", s.conv2_b);
        return r;
    };
    auto tb = [&](const std::string& p, const TransformerBlockWeights& s) {
        TransformerBlockWeights t;
        t.ln1_g = pb.copy_of(p + ".ln1.g", s.ln1_g);
        t.ln1_b = pb.copy_of(p + ".ln1.b", s.ln1_b);
        t.attn_wq = pb.copy_of(p + ".attn.wq", s.attn_wq);
        t.attn_wk = pb.copy_of(p + ".attn.wk", s.attn_wk);
        t.attn_wv = pb.copy_of(p + ".attn.wv", s.attn_wv);
        t.attn_wo = pb.copy_of(p + ".attn.wo", s.attn_wo);
        t.ln2_g = pb.copy_of(p + ".ln2.g", s.ln2_g);
        t.ln2_b = pb.copy_of(p + ".ln2.b", s.ln2_b);
        t.cross_wq = pb.copy_of(p + ".cross.wq", s.cross_wq);
        t.cross_wk = pb.copy_of(p + ".cross.wk", s.cross_wk);
        t.cross_wv = pb.copy_of(p + ".cross.wv", s.cross_wv);
        t.cross_wo = pb.copy_of(p + ".cross.wo", s.cross_wo);
        t.ln3_g = pb.copy_of(p + ".ln3.g", s.ln3_g);
        t.ln3_b = pb.copy_of(p + ".ln3.b", s.ln3_b);
        t.ffn_w1 = pb.copy_of(p + ".ffn.w1", s.ffn_w1);
        t.ffn_b1 = pb.copy_of(p + ".ffn.b1", s.ffn_b1);
        t.ffn_w2 = pb.copy_of(p + ".ffn.w2", s.ffn_w2);
        t.ffn_b2 = pb.copy_of(p + ".ffn.b2", s.ffn_b2);
        return t;
    };
    e.conv_in_w = pb.copy_of(prefix + ".conv_in.w", src.conv_in_w);
    e.conv_in_b = pb.copy_of(prefix + ".conv_in.b", src.conv_in_b);
    e.rb1 = rb(prefix + ".rb1", src.rb1);
    e.tb1 = tb(prefix + ".tb1", src.tb1);
    e.down_w = pb.copy_of(prefix + ".down.w", src.down_w);
    e.down_b = pb.copy_of(prefix + ".down.b", src.down_b);
    e.rb2 = rb(prefix + ".rb2", src.rb2);
    e.tb2 = tb(prefix + ".tb2", src.tb2);
    e.rb_mid = rb(prefix + ".rb_mid", src.rb_mid);
    return e;
}

}  // namespace

Tensor timestep_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("timestep_embedding: even dim >= 2");
    const int half = dim / 2;
    Tensor emb({1, dim});
    for (int i = 0; i < half; ++i) {
        const double freq =
            half == 1 ? 1.0 : std::exp(-std::log(10000.0) * i / static_cast<double>(half - 1));
        emb.at(0, 2 * i) = std::sin(t * freq);
        emb.at(0, 2 * i + 1) = std::cos(t * freq);
    }
    return emb;
}

DenoiserModel init_denoiser(std::uint64_t seed, const DenoiserDims& dims) {
    if (dims.ch1 < 1 || dims.ch2 < 1 || dims.d_attn < 1 || dims.d_prompt < 1 ||
        dims.image_channels < 1)
        throw std::invalid_argument("init_denoiser: dims must be positive");
    if (dims.patch != 1 && dims.patch != 2 && dims.patch != 4)
        throw std::invalid_argument("init_denoiser: patch must be 1, 2 or 4");
    if (dims.temb_dim % 2 != 0) throw std::invalid_argument("init_denoiser: temb_dim must be even");

    DenoiserModel m;
    m.dims = dims;
    m.seed = seed;
    Rng rng(mix_seed(seed, 0xd390d3ULL));
    ParamBuilder pb{&m, &rng, false};

    // base
    m.temb_w1 = pb.tensor("base.temb.w1", {dims.temb_dim, dims.temb_dim},
                          1.0 / std::sqrt(dims.temb_dim));
    m.temb_b1 = pb.zeros("base.temb.b1", {dims.temb_dim});
    m.temb_w2 = pb.tensor("base.temb.w2", {dims.temb_dim, dims.temb_dim},
                          1.0 / std::sqrt(dims.temb_dim));
    m.temb_b2 = pb.zeros("base.temb.b2", {dims.temb_dim});
    m.base = make_encoder(pb, "base.enc", dims);
    m.dec_rb2 = make_resblock(pb, "base.dec_rb2", dims.ch2, dims.temb_dim);
    m.up_w = pb.tensor("base.up.w", {dims.ch1, dims.ch2, 3, 3}, conv_std(dims.ch2 * 9));
    m.up_b = pb.zeros("base.up.b", {dims.ch1});
    m.dec_rb1 = make_resblock(pb, "base.dec_rb1", dims.ch1, dims.temb_dim);
    m.conv_out_w = pb.tensor("base.conv_out.w", {dims.latent_channels(), dims.ch1, 3, 3},
                             conv_std(dims.ch1 * 9));
    m.conv_out_b = pb.zeros("base.conv_out.b", {dims.latent_channels()});

    // control branch
    pb.trainable = true;
    int hc = dims.image_channels;
    int stage = 0;
    for (int p = dims.patch; p > 1; p /= 2, ++stage) {
        const int oc = (p == 2) ? dims.ch1 : 16;
        m.hint_w.push_back(pb.tensor("ctrl.hint" + std::to_string(stage) + ".w", {oc, hc, 3, 3},
                                     conv_std(hc * 9)));
        m.hint_b.push_back(pb.zeros("ctrl.hint" + std::to_string(stage) + ".b", {oc}));
        hc = oc;
    }
    if (dims.patch == 1) {
        m.hint_w.push_back(pb.tensor("ctrl.hint0.w", {dims.ch1, hc, 3, 3}, conv_std(hc * 9)));
        m.hint_b.push_back(pb.zeros("ctrl.hint0.b", {dims.ch1}));
    }
    m.ctrl = copy_encoder(pb, "ctrl.enc", m.base);
    m.zero1_w = pb.zeros("ctrl.zero1.w", {dims.ch1, dims.ch1, 1, 1});
    m.zero1_b = pb.zeros("ctrl.zero1.b", {dims.ch1});
    m.zero2_w = pb.zeros("ctrl.zero2.w", {dims.ch2, dims.ch2, 1, 1});
    m.zero2_b = pb.zeros("ctrl.zero2.b", {dims.ch2});
    m.zero3_w = pb.zeros("ctrl.zero3.w", {dims.ch2, dims.ch2, 1, 1});
    m.zero3_b = pb.zeros("ctrl.zero3.b", {dims.ch2});
    return m;
}

bool DenoiserModel::control_taps_are_zero() const {
    for (const Var* v : {&zero1_w, &zero1_b, &zero2_w, &zero2_b, &zero3_w, &zero3_b})
        for (double x : (*v)->val.data)
            if (x != 0.0) return false;
    return true;
}

namespace {

Var resblock_forward(const ResBlockWeights& rb, const Var& x, const Var& temb) {
    Var h = nn::conv2d(nn::silu(x), rb.conv1_w, rb.conv1_b, 1, 1);
    Var tproj = nn::add(nn::matmul_op(temb, rb.temb_w), rb.temb_b);  // 1 x ch
    h = nn::add_channel_vec(h, tproj);
    h = nn::conv2d(nn::silu(h), rb.conv2_w, rb.conv2_b, 1, 1);
    return nn::add(x, h);
}

// Applies one transformer block to every frame in lockstep so cross-frame
// modes can gather keys/values from neighbors at the same depth.
std::vector<Var> transformer_forward(const TransformerBlockWeights& tb, std::vector<Var> hs,
                                     const Var& prompt_row, const AttentionMode& mode) {
    const int frames = static_cast<int>(hs.size());
    const int h = hs[0]->val.shape[1], w = hs[0]->val.shape[2];

    std::vector<Var> tokens(frames), normed(frames);
    for (int i = 0; i < frames; ++i) {
        tokens[i] = nn::spatial_to_tokens(hs[i]);
        normed[i] = nn::layer_norm(tokens[i], tb.ln1_g, tb.ln1_b);
    }

    std::vector<Var> keys(frames), vals(frames);
    for (int i = 0; i < frames; ++i) {
        keys[i] = nn::matmul_op(normed[i], tb.attn_wk);
        vals[i] = nn::matmul_op(normed[i], tb.attn_wv);
    }

    std::vector<Var> out(frames);
    for (int i = 0; i < frames; ++i) {
        Var q = nn::matmul_op(normed[i], tb.attn_wq);
        Var k, v;
        switch (mode.variant) {
            case AttentionVariant::SelfAttention:
                k = keys[i];
                v = vals[i];
                break;
            case AttentionVariant::FirstFrameCfa:
                k = keys[0];
                v = vals[0];
                break;
            case AttentionVariant::SlidingWindowCfa: {
                const int lo = std::max(0, i - mode.window_radius);
                const int hi = std::min(frames - 1, i + mode.window_radius);
                std::vector<Var> kw(keys.begin() + lo, keys.begin() + hi + 1);
                std::vector<Var> vw(vals.begin() + lo, vals.begin() + hi + 1);
                k = nn::mean_of(kw);
                v = nn::mean_of(vw);
                break;
            }
        }
        Var a = nn::add(tokens[i], nn::matmul_op(nn::attend_op(q, k, v), tb.attn_wo));

        Var n2 = nn::layer_norm(a, tb.ln2_g, tb.ln2_b);
        Var cq = nn::matmul_op(n2, tb.cross_wq);
        Var ck = nn::matmul_op(prompt_row, tb.cross_wk);
        Var cv = nn::matmul_op(prompt_row, tb.cross_wv);
        Var b = nn::add(a, nn::matmul_op(nn::attend_op(cq, ck, cv), tb.cross_wo));

        Var n3 = nn::layer_norm(b, tb.ln3_g, tb.ln3_b);
        Var f = nn::add_row_vec(nn::matmul_op(n3, tb.ffn_w1), tb.ffn_b1);
        f = nn::add_row_vec(nn::matmul_op(nn::silu(f), tb.ffn_w2), tb.ffn_b2);
        out[i] = nn::tokens_to_spatial(nn::add(b, f), h, w);
    }
    return out;
}

struct EncoderOut {
    std::vector<Var> e1;   // ch1, full res
    std::vector<Var> e2;   // ch2, half res
    std::vector<Var> mid;  // ch2, half res
};

EncoderOut encoder_forward(const EncoderWeights& enc, std::vector<Var> input, const Var& temb,
                           const Var& prompt_row, const AttentionMode& mode,
                           const std::vector<Var>* extra_in) {
    const int frames = static_cast<int>(input.size());
    std::vector<Var> h(frames);
    for (int i = 0; i < frames; ++i) {
        h[i] = nn::conv2d(input[i], enc.conv_in_w, enc.conv_in_b, 1, 1);
        if (extra_in) h[i] = nn::add(h[i], (*extra_in)[i]);
        h[i] = resblock_forward(enc.rb1, h[i], temb);
    }
    EncoderOut out;
    out.e1 = transformer_forward(enc.tb1, h, prompt_row, mode);

    std::vector<Var> h2(frames);
    for (int i = 0; i < frames; ++i) {
        h2[i] = nn::conv2d(out.e1[i], enc.down_w, enc.down_b, 2, 1);
        h2[i] = resblock_forward(enc.rb2, h2[i], temb);
    }
    out.e2 = transformer_forward(enc.tb2, h2, prompt_row, mode);

    out.mid.resize(frames);
    for (int i = 0; i < frames; ++i) out.mid[i] = resblock_forward(enc.rb_mid, out.e2[i], temb);
    return out;
}

Var temb_forward(const DenoiserModel& m, int t) {
    Var e = nn::constant(timestep_embedding(t, m.dims.temb_dim));
    e = nn::add_row_vec(nn::matmul_op(e, m.temb_w1), m.temb_b1);
    e = nn::add_row_vec(nn::matmul_op(nn::silu(e), m.temb_w2), m.temb_b2);
    return e;
}

Var prompt_row_var(const DenoiserModel& m, const TaskPrompt& prompt) {
    if (prompt.embedding.shape != std::vector<int>{m.dims.d_prompt})
        throw std::invalid_argument("prompt embedding dim does not match model d_prompt");
    Tensor row({1, m.dims.d_prompt});
    row.data = prompt.embedding.data;
    return nn::constant(std::move(row));
}

struct ControlTaps {
    std::vector<Var> r1, r2, r3;
};

ControlTaps control_forward(const DenoiserModel& m, const std::vector<Var>& latents,
                            const std::vector<Tensor>& conditions, const Var& temb,
                            const Var& prompt_row, const AttentionMode& mode) {
    const int frames = static_cast<int>(latents.size());
    std::vector<Var> hints(frames);
    for (int i = 0; i < frames; ++i) {
        if (conditions[i].rank() != 3 || conditions[i].shape[0] != m.dims.image_channels)
            throw std::invalid_argument("control: condition image has wrong channel count");
        Var h = nn::constant(conditions[i]);
        for (std::size_t s = 0; s < m.hint_w.size(); ++s) {
            const int stride = m.dims.patch == 1 ? 1 : 2;
            h = nn::silu(nn::conv2d(h, m.hint_w[s], m.hint_b[s], stride, 1));
        }
        if (h->val.shape[1] != latents[i]->val.shape[1] ||
            h->val.shape[2] != latents[i]->val.shape[2])
            throw std::invalid_argument("control: condition shape does not match latent grid");
        hints[i] = h;
    }

    EncoderOut enc = encoder_forward(m.ctrl, latents, temb, prompt_row, mode, &hints);

    ControlTaps taps;
    taps.r1.resize(frames);
    taps.r2.resize(frames);
    taps.r3.resize(frames);
    for (int i = 0; i < frames; ++i) {
        taps.r1[i] = nn::conv2d(enc.e1[i], m.zero1_w, m.zero1_b, 1, 0);
        taps.r2[i] = nn::conv2d(enc.e2[i], m.zero2_w, m.zero2_b, 1, 0);
        taps.r3[i] = nn::conv2d(enc.mid[i], m.zero3_w, m.zero3_b, 1, 0);
    }
    return taps;
}

std::vector<Var> denoiser_forward(const DenoiserModel& m, const std::vector<Var>& latents, int t,
                                  const std::vector<Tensor>* conditions, const TaskPrompt& prompt,
                                  const AttentionMode& mode) {
    if (latents.empty()) throw std::invalid_argument("predict_noise: empty frame list");
    const int frames = static_cast<int>(latents.size());
    for (const Var& z : latents) {
        if (z->val.rank() != 3 || z->val.shape[0] != m.dims.latent_channels())
            throw std::invalid_argument("predict_noise: latent channel mismatch");
        if (!z->val.same_shape(latents[0]->val))
            throw std::invalid_argument("predict_noise: frames must share shape");
        if (z->val.shape[1] % 2 != 0 || z->val.shape[2] % 2 != 0)
            throw std::invalid_argument("predict_noise: latent extent must be even");
    }
    if (conditions && static_cast<int>(conditions->size()) != frames)
        throw std::invalid_argument("predict_noise: condition count != frame count");

    Var temb = temb_forward(m, t);
    Var prompt_row = prompt_row_var(m, prompt);

    ControlTaps taps;
    if (conditions) taps = control_forward(m, latents, *conditions, temb, prompt_row, mode);

    EncoderOut enc = encoder_forward(m.base, latents, temb, prompt_row, mode, nullptr);

    std::vector<Var> out(frames);
    std::vector<Var> d2(frames);
    for (int i = 0; i < frames; ++i) {
        Var mid = enc.mid[i];
        Var skip2 = enc.e2[i];
        if (conditions) {
            mid = nn::add(mid, taps.r3[i]);
            skip2 = nn::add(skip2, taps.r2[i]);
        }
        d2[i] = resblock_forward(m.dec_rb2, nn::add(mid, skip2), temb);
    }
    for (int i = 0; i < frames; ++i) {
        Var u = nn::conv2d(nn::upsample_nearest2x(d2[i]), m.up_w, m.up_b, 1, 1);
        Var skip1 = enc.e1[i];
        if (conditions) skip1 = nn::add(skip1, taps.r1[i]);
        Var d1 = resblock_forward(m.dec_rb1, nn::add(u, skip1), temb);
        out[i] = nn::conv2d(nn::silu(d1), m.conv_out_w, m.conv_out_b, 1, 1);
    }
    return out;
}

std::vector<Var> latents_as_vars(const std::vector<Tensor>& latents) {
    std::vector<Var> vars;
    vars.reserve(latents.size());
    for (const Tensor& t : latents) vars.push_back(nn::constant(t));
    return vars;
}

}  // namespace

std::vector<Tensor> control_residuals(const DenoiserModel& model, const Tensor& z_t,
                                      const Tensor& condition, int t, const TaskPrompt& prompt) {
    nn::NoGradGuard ng;
    Var temb = temb_forward(model, t);
    Var prompt_row = prompt_row_var(model, prompt);
    ControlTaps taps = control_forward(model, {nn::constant(z_t)}, {condition}, temb, prompt_row,
                                       AttentionMode::self_attention());
    return {taps.r1[0]->val, taps.r2[0]->val, taps.r3[0]->val};
}

std::vector<Tensor> predict_noise(const DenoiserModel& model, const std::vector<Tensor>& latents,
                                  int t, const std::vector<Tensor>& conditions,
                                  const TaskPrompt& prompt, const AttentionMode& mode) {
    nn::NoGradGuard ng;
    std::vector<Var> eps =
        denoiser_forward(model, latents_as_vars(latents), t, &conditions, prompt, mode);
    std::vector<Tensor> out;
    out.reserve(eps.size());
    for (Var& e : eps) out.push_back(std::move(e->val));
    return out;
}

std::vector<Tensor> predict_noise_base_only(const DenoiserModel& model,
                                            const std::vector<Tensor>& latents, int t,
                                            const TaskPrompt& prompt, const AttentionMode& mode) {
    nn::NoGradGuard ng;
    std::vector<Var> eps =
        denoiser_forward(model, latents_as_vars(latents), t, nullptr, prompt, mode);
    std::vector<Tensor> out;
    out.reserve(eps.size());
    for (Var& e : eps) out.push_back(std::move(e->val));
    return out;
}

nn::Var training_loss(const DenoiserModel& model, const Codec& codec, const Tensor& clean,
                      const Tensor& degraded, const TaskPrompt& prompt, int t,
                      const Tensor& noise, const Schedule& sched) {
    const Tensor z0 = codec.encode(clean).data;
    check_same_shape(z0, noise, "training_loss: noise must be latent-shaped");
    const Tensor z_t = forward_diffuse(z0, t, noise, sched);
    std::vector<Tensor> conds{degraded};
    std::vector<Var> eps = denoiser_forward(model, latents_as_vars({z_t}), t, &conds, prompt,
                                            AttentionMode::self_attention());
    return nn::mse_loss(eps[0], noise);
}

void AdamW::step(const std::vector<nn::Var>& params) {
    if (m.empty()) {
        m.resize(params.size());
        v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = Tensor(params[i]->val.shape);
            v[i] = Tensor(params[i]->val.shape);
        }
    }
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, step_count);
    const double bc2 = 1.0 - std::pow(beta2, step_count);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->grad.data.empty()) continue;
        Tensor& p = params[i]->val;
        const Tensor& g = params[i]->grad;
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            m[i].data[j] = beta1 * m[i].data[j] + (1.0 - beta1) * g.data[j];
            v[i].data[j] = beta2 * v[i].data[j] + (1.0 - beta2) * g.data[j] * g.data[j];
            const double mhat = m[i].data[j] / bc1;
            const double vhat = v[i].data[j] / bc2;
            p.data[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.data[j]);
        }
    }
}

double train_step(DenoiserModel& model, const Codec& codec, const Tensor& clean,
                  const Tensor& degraded, const TaskPrompt& prompt, int t, const Tensor& noise,
                  const Schedule& sched, double learning_rate, AdamW* opt) {
    nn::Var loss = training_loss(model, codec, clean, degraded, prompt, t, noise, sched);
    const double loss_val = loss->val.data[0];
    if (!std::isfinite(loss_val)) throw std::runtime_error("train_step: non-finite loss");

    for (const nn::Var& p : model.control_vars)
        if (!p->grad.data.empty()) p->grad *= 0.0;
    nn::backward(loss);

    if (opt) {
        opt->lr = learning_rate;
        opt->step(model.control_vars);
    } else {
        for (const nn::Var& p : model.control_vars) {
            if (p->grad.data.empty()) continue;
            for (std::size_t j = 0; j < p->val.data.size(); ++j)
                p->val.data[j] -= learning_rate * p->grad.data[j];
        }
    }
    return loss_val;
}

void zero_base_weights(DenoiserModel& model) {
    for (Param& p : model.params)
        if (p.name.rfind("base.", 0) == 0)
            for (double& x : p.var->val.data) x = 0.0;
}

void save_checkpoint(const DenoiserModel& model, const std::string& path) {
    nlohmann::json header;
    header["format"] = "tdm-checkpoint";
    header["version"] = 1;
    header["seed"] = model.seed;
    header["dims"] = {{"image_channels", model.dims.image_channels},
                      {"patch", model.dims.patch},
                      {"ch1", model.dims.ch1},
                      {"ch2", model.dims.ch2},
                      {"d_attn", model.dims.d_attn},
                      {"d_prompt", model.dims.d_prompt},
                      {"temb_dim", model.dims.temb_dim}};
    std::size_t count = 0;
    for (const Param& p : model.params) count += p.var->val.numel();
    header["param_count"] = count;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << header.dump() << "\n";
    std::vector<float> blob;
    blob.reserve(count);
    for (const Param& p : model.params)
        for (double x : p.var->val.data) blob.push_back(static_cast<float>(x));
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

DenoiserModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_checkpoint: missing header");
    nlohmann::json header = nlohmann::json::parse(line);
    if (header.value("format", "") != "tdm-checkpoint" || header.value("version", 0) != 1)
        throw std::runtime_error("load_checkpoint: unrecognized format");

    DenoiserDims dims;
    const auto& d = header.at("dims");
    dims.image_channels = d.at("image_channels").get<int>();
    dims.patch = d.at("patch").get<int>();
    dims.ch1 = d.at("ch1").get<int>();
    dims.ch2 = d.at("ch2").get<int>();
    dims.d_attn = d.at("d_attn").get<int>();
    dims.d_prompt = d.at("d_prompt").get<int>();
    dims.temb_dim = d.at("temb_dim").get<int>();

    DenoiserModel model = init_denoiser(header.at("seed").get<std::uint64_t>(), dims);
    const std::size_t count = header.at("param_count").get<std::size_t>();
    std::vector<float> blob(count);
    in.read(reinterpret_cast<char*>(blob.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
        throw std::runtime_error("load_checkpoint: truncated parameter blob");

    std::size_t off = 0;
    for (Param& p : model.params) {
        for (double& x : p.var->val.data) x = static_cast<double>(blob[off++]);
    }
    return model;
}

}  // namespace tdm
