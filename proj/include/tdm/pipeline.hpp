#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdm/codec.hpp"
#include "tdm/denoiser.hpp"
#include "tdm/metrics.hpp"
#include "tdm/prompts.hpp"
#include "tdm/scheduler.hpp"
#include "tdm/synth.hpp"

namespace tdm {

// Per-frame latents marching in lockstep through the timestep ladder.
struct VideoLatents {
    std::vector<LatentGrid> latents;
    int timestep_level = 0;
};

struct RestoreConfig {
    Task task = Task::Denoise;
    AttentionMode mode = AttentionMode::sliding_window(3);
    int inversion_steps = 10;
    int sampling_steps = 32;
    bool use_inversion = true;
    bool neutral_prompt = false;  // all-zero prompt embedding (no-guidance ablation)
    std::uint64_t seed = 0;
    int total_steps = kDefaultTotalSteps;
    double beta_start = kDefaultBetaStart;
    double beta_end = kDefaultBetaEnd;

    Schedule schedule() const {
        return make_schedule(total_steps, beta_start, beta_end, BetaKind::ScaledLinear);
    }
    TaskPrompt prompt(int d_prompt, std::uint64_t prompt_seed = 0) const {
        return neutral_prompt ? TaskPrompt::neutral(d_prompt)
                              : embed_task(canonical_text(task), d_prompt, prompt_seed);
    }
};

// Encode + ascend the inversion ladder; inversion is conditioned exactly like
// sampling (same prompt, condition frames and attention mode).
VideoLatents invert_video(const DenoiserModel& model, const Codec& codec,
                          const FrameSequence& frames, const RestoreConfig& cfg);

// Descend the sampling ladder from the top level, decode and clamp to [0,1].
FrameSequence sample_video(const DenoiserModel& model, const Codec& codec,
                           const VideoLatents& latents, const FrameSequence& condition,
                           const RestoreConfig& cfg);

struct RestoreResult {
    FrameSequence restored;
    MetricsRow metrics;
};

// Full Fig.-2 style pass: invert (or seeded Gaussian init) then sample, plus
// FC/WE/PSNR of the output. `clean` may be null (PSNR omitted).
RestoreResult restore_video(const DenoiserModel& model, const Codec& codec,
                            const FrameSequence& degraded, const RestoreConfig& cfg,
                            const FrameSequence* clean = nullptr);

struct TrainSample {
    Tensor clean;
    Tensor degraded;
    Task task = Task::Denoise;
};

struct FineTuneResult {
    std::vector<double> loss_history;
};

inline constexpr double kDefaultLearningRate = 2e-3;

// Seeded shuffled single-image training steps over the control branch.
FineTuneResult fine_tune(DenoiserModel& model, const Codec& codec,
                         const std::vector<TrainSample>& dataset, int epochs, double lr,
                         std::uint64_t seed, const Schedule& sched);

// Trailing/leading window means of a loss curve, for efficacy checks.
double smoothed_head(const std::vector<double>& history, int window);
double smoothed_tail(const std::vector<double>& history, int window);

// Average epsilon-MSE of the model on given pairs under a fixed prompt,
// without updating weights (TPG discrimination surface).
double eval_loss(const DenoiserModel& model, const Codec& codec,
                 const std::vector<TrainSample>& samples, const TaskPrompt& prompt,
                 const Schedule& sched, std::uint64_t seed, int draws_per_sample = 4);

struct AblationClip {
    FrameSequence degraded;
    FrameSequence clean;
    Task task = Task::Denoise;
    std::string id;
};

struct AblationCell {
    double fc = 0.0;
    double we = 0.0;
    double psnr = 0.0;
    int clips = 0;
};

struct AblationRow {
    std::string name;  // "T+I", "T+S", "I+S", "full"
    bool tpg = false;
    bool inversion = false;
    bool sw_cfa = false;
    std::vector<AblationCell> per_task;  // indexed by Task order: dehaze..sr4
};

struct AblationTable {
    std::vector<AblationRow> rows;  // exactly 4
    std::string to_csv() const;
};

// The four-configuration study: T+I (no SW-CFA), T+S (no inversion),
// I+S (neutral prompt) and the full setup. Clips run in parallel when
// threads > 1; results are reduced in clip order either way.
AblationTable run_ablation(const DenoiserModel& model, const Codec& codec,
                           const std::vector<AblationClip>& clips, const RestoreConfig& base_cfg,
                           int threads = 1);

// report.json payload for a restore run (deterministic; no wall-clock fields).
std::string restore_report_json(const RestoreConfig& cfg, const std::string& clip_id,
                                const MetricsRow& row);

}  // namespace tdm
