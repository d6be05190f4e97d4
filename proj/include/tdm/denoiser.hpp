#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdm/attention.hpp"
#include "tdm/codec.hpp"
#include "tdm/nn.hpp"
#include "tdm/prompts.hpp"
#include "tdm/scheduler.hpp"

namespace tdm {

struct DenoiserDims {
    int image_channels = 3;  // condition image channels
    int patch = 4;           // image -> latent spatial ratio (1, 2 or 4)
    int ch1 = 32;            // width at full latent resolution
    int ch2 = 64;            // width at half latent resolution
    int d_attn = 32;         // attention key/query dim
    int d_prompt = 32;       // prompt embedding dim
    int temb_dim = 64;       // timestep embedding dim (even)

    int latent_channels() const { return image_channels * patch * patch; }
};

// Named parameter; base parameters are frozen (requires_grad = false),
// control parameters train.
struct Param {
    std::string name;
    nn::Var var;
};

struct ResBlockWeights {
    nn::Var conv1_w, conv1_b;
    nn::Var temb_w, temb_b;
    nn::Var conv2_w, conv2_b;
};

struct TransformerBlockWeights {
    nn::Var ln1_g, ln1_b;
    nn::Var attn_wq, attn_wk, attn_wv, attn_wo;
    nn::Var ln2_g, ln2_b;
    nn::Var cross_wq, cross_wk, cross_wv, cross_wo;
    nn::Var ln3_g, ln3_b;
    nn::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct EncoderWeights {
    nn::Var conv_in_w, conv_in_b;
    ResBlockWeights rb1;
    TransformerBlockWeights tb1;
    nn::Var down_w, down_b;
    ResBlockWeights rb2;
    TransformerBlockWeights tb2;
    ResBlockWeights rb_mid;
};

// Two-resolution conv+attention U-net plus a trainable copy of its encoder
// conditioned on the degraded frame; control taps are zero-initialized.
struct DenoiserModel {
    DenoiserDims dims;
    std::uint64_t seed = 0;

    // base (frozen)
    nn::Var temb_w1, temb_b1, temb_w2, temb_b2;
    EncoderWeights base;
    ResBlockWeights dec_rb2;
    nn::Var up_w, up_b;
    ResBlockWeights dec_rb1;
    nn::Var conv_out_w, conv_out_b;

    // control branch (trainable)
    std::vector<nn::Var> hint_w, hint_b;  // stride-2 conv chain, image -> ch1
    EncoderWeights ctrl;
    nn::Var zero1_w, zero1_b;  // tap after ctrl stage 1, ch1
    nn::Var zero2_w, zero2_b;  // tap after ctrl stage 2, ch2
    nn::Var zero3_w, zero3_b;  // tap after ctrl middle, ch2

    std::vector<Param> params;          // declaration order, base then control
    std::vector<nn::Var> control_vars;  // the trainable subset

    bool control_taps_are_zero() const;
};

DenoiserModel init_denoiser(std::uint64_t seed, const DenoiserDims& dims = {});

// Fixed sinusoidal encoding of t, distinct for distinct timesteps.
Tensor timestep_embedding(int t, int dim);

// Control branch forward pass: residual tensors (stage1, stage2, middle) that
// add into the base decoder taps. Takes the noisy latent alongside the
// degraded condition frame, as the control encoder is a copy of the base
// encoder and consumes the same latent stream.
std::vector<Tensor> control_residuals(const DenoiserModel& model, const Tensor& z_t,
                                      const Tensor& condition, int t, const TaskPrompt& prompt);

// Per-frame epsilon prediction; all transformer blocks use `mode`.
std::vector<Tensor> predict_noise(const DenoiserModel& model, const std::vector<Tensor>& latents,
                                  int t, const std::vector<Tensor>& conditions,
                                  const TaskPrompt& prompt, const AttentionMode& mode);

// Base network output with the control branch disabled (test/ablation surface).
std::vector<Tensor> predict_noise_base_only(const DenoiserModel& model,
                                            const std::vector<Tensor>& latents, int t,
                                            const TaskPrompt& prompt, const AttentionMode& mode);

// Differentiable epsilon-MSE training loss for one (clean, degraded) pair.
// z_t is formed internally via forward_diffuse(encode(clean), t, noise).
nn::Var training_loss(const DenoiserModel& model, const Codec& codec, const Tensor& clean,
                      const Tensor& degraded, const TaskPrompt& prompt, int t,
                      const Tensor& noise, const Schedule& sched);

// Decoupled-weight-decay Adam over the control parameters.
struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
    long step_count = 0;
    std::vector<Tensor> m, v;

    void step(const std::vector<nn::Var>& params);
};

// One gradient step on the control branch only; base weights stay bit-identical.
// Returns the loss value. `opt` carries optimizer state across steps; when
// null, a plain SGD update with `learning_rate` is applied.
double train_step(DenoiserModel& model, const Codec& codec, const Tensor& clean,
                  const Tensor& degraded, const TaskPrompt& prompt, int t, const Tensor& noise,
                  const Schedule& sched, double learning_rate, AdamW* opt = nullptr);

void save_checkpoint(const DenoiserModel& model, const std::string& path);
DenoiserModel load_checkpoint(const std::string& path);

// Test fixture: zeroes every base parameter so the base net outputs zero.
void zero_base_weights(DenoiserModel& model);

}  // namespace tdm
