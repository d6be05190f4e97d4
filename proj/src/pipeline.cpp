#include "tdm/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "tdm/rng.hpp"

namespace tdm {

namespace {

std::vector<Tensor> latent_tensors(const VideoLatents& v) {
    std::vector<Tensor> out;
    out.reserve(v.latents.size());
    for (const LatentGrid& g : v.latents) out.push_back(g.data);
    return out;
}

TaskPrompt cfg_prompt(const DenoiserModel& model, const RestoreConfig& cfg) {
    return cfg.prompt(model.dims.d_prompt);
}

}  // namespace

VideoLatents invert_video(const DenoiserModel& model, const Codec& codec,
                          const FrameSequence& frames, const RestoreConfig& cfg) {
    if (frames.frames.empty()) throw std::invalid_argument("invert_video: empty clip");
    const Schedule sched = cfg.schedule();
    const TimestepLadder ladder = select_timesteps(sched, cfg.inversion_steps);
    const TaskPrompt prompt = cfg_prompt(model, cfg);

    VideoLatents v;
    v.timestep_level = 0;
    for (const Tensor& f : frames.frames) v.latents.push_back(codec.encode(f));

    int t_cur = 0;
    for (int step : ladder.steps) {
        std::vector<Tensor> eps =
            predict_noise(model, latent_tensors(v), t_cur, frames.frames, prompt, cfg.mode);
        for (std::size_t i = 0; i < v.latents.size(); ++i)
            v.latents[i].data = ddim_inversion_step(v.latents[i].data, eps[i], t_cur, step, sched);
        t_cur = step;
    }
    v.timestep_level = t_cur;
    return v;
}

FrameSequence sample_video(const DenoiserModel& model, const Codec& codec,
                           const VideoLatents& latents, const FrameSequence& condition,
                           const RestoreConfig& cfg) {
    if (latents.latents.empty()) throw std::invalid_argument("sample_video: empty latents");
    const Schedule sched = cfg.schedule();
    const TimestepLadder ladder = select_timesteps(sched, cfg.sampling_steps);
    if (latents.timestep_level != ladder.steps.back())
        throw std::invalid_argument("sample_video: latents are not at the ladder top");
    const TaskPrompt prompt = cfg_prompt(model, cfg);

    VideoLatents v = latents;
    for (int k = ladder.count - 1; k >= 0; --k) {
        const int t = ladder.steps[k];
        const int t_prev = k > 0 ? ladder.steps[k - 1] : 0;
        std::vector<Tensor> eps =
            predict_noise(model, latent_tensors(v), t, condition.frames, prompt, cfg.mode);
        for (std::size_t i = 0; i < v.latents.size(); ++i)
            v.latents[i].data = ddim_backward_step(v.latents[i].data, eps[i], t, t_prev, sched);
    }
    v.timestep_level = 0;

    FrameSequence out;
    out.motion_spec = condition.motion_spec;
    out.frames.reserve(v.latents.size());
    for (const LatentGrid& g : v.latents) {
        Tensor img = codec.decode(g);
        for (double& x : img.data) x = std::min(1.0, std::max(0.0, x));
        out.frames.push_back(std::move(img));
    }
    return out;
}

RestoreResult restore_video(const DenoiserModel& model, const Codec& codec,
                            const FrameSequence& degraded, const RestoreConfig& cfg,
                            const FrameSequence* clean) {
    const Schedule sched = cfg.schedule();

    VideoLatents top;
    if (cfg.use_inversion) {
        top = invert_video(model, codec, degraded, cfg);
    } else {
        // seeded Gaussian start at the ladder top, drawn independently per frame
        const TimestepLadder ladder = select_timesteps(sched, cfg.sampling_steps);
        Rng rng(mix_seed(cfg.seed, 0x6a055ULL));
        for (const Tensor& f : degraded.frames) {
            LatentGrid g = codec.encode(f);  // establishes shape/metadata
            rng.fill_normal(g.data);
            top.latents.push_back(std::move(g));
        }
        top.timestep_level = ladder.steps.back();
    }

    RestoreResult res;
    res.restored = sample_video(model, codec, top, degraded, cfg);

    if (res.restored.n_frames() >= 2) {
        res.metrics.fc = frame_consistency(res.restored);
        if (res.restored.motion_spec) {
            res.metrics.we = warping_error(res.restored, flows_from_motion_spec(res.restored),
                                           /*wrap=*/true);
        } else {
            std::vector<FlowField> flows;
            for (int i = 0; i + 1 < res.restored.n_frames(); ++i)
                flows.push_back(estimate_flow(res.restored.frames[i], res.restored.frames[i + 1]));
            res.metrics.we = warping_error(res.restored, flows, /*wrap=*/false);
        }
    }
    if (clean) {
        if (clean->n_frames() != res.restored.n_frames())
            throw std::invalid_argument("restore_video: clean reference frame count mismatch");
        double acc = 0.0;
        for (int i = 0; i < res.restored.n_frames(); ++i)
            acc += psnr(res.restored.frames[i], clean->frames[i]);
        res.metrics.psnr_vs_clean = acc / res.restored.n_frames();
        res.metrics.has_psnr = true;
    }
    return res;
}

FineTuneResult fine_tune(DenoiserModel& model, const Codec& codec,
                         const std::vector<TrainSample>& dataset, int epochs, double lr,
                         std::uint64_t seed, const Schedule& sched) {
    if (dataset.empty()) throw std::invalid_argument("fine_tune: empty dataset");

    FineTuneResult result;
    if (epochs <= 0) return result;

    // canonical prompts resolved once per task
    std::vector<TaskPrompt> prompts;
    for (const auto& [task, text] : task_catalog())
        prompts.push_back(embed_task(text, model.dims.d_prompt, 0));
    auto prompt_for = [&](Task t) -> const TaskPrompt& {
        for (const TaskPrompt& p : prompts)
            if (p.task && *p.task == t) return p;
        throw std::logic_error("fine_tune: task missing from catalog");
    };

    AdamW opt;
    Rng rng(mix_seed(seed, 0xf17eULL));
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int e = 0; e < epochs; ++e) {
        // seeded Fisher-Yates shuffle
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
        for (std::size_t idx : order) {
            const TrainSample& s = dataset[idx];
            const int t = rng.uniform_int(1, sched.total_steps);
            Tensor noise(codec.encode(s.clean).data.shape);
            rng.fill_normal(noise);
            const double loss = train_step(model, codec, s.clean, s.degraded, prompt_for(s.task),
                                           t, noise, sched, lr, &opt);
            result.loss_history.push_back(loss);
        }
    }
    return result;
}

double smoothed_head(const std::vector<double>& history, int window) {
    if (history.empty()) throw std::invalid_argument("smoothed_head: empty history");
    const int n = std::min<int>(window, static_cast<int>(history.size()));
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += history[i];
    return s / n;
}

double smoothed_tail(const std::vector<double>& history, int window) {
    if (history.empty()) throw std::invalid_argument("smoothed_tail: empty history");
    const int n = std::min<int>(window, static_cast<int>(history.size()));
    double s = 0.0;
    for (int i = static_cast<int>(history.size()) - n; i < static_cast<int>(history.size()); ++i)
        s += history[i];
    return s / n;
}

double eval_loss(const DenoiserModel& model, const Codec& codec,
                 const std::vector<TrainSample>& samples, const TaskPrompt& prompt,
                 const Schedule& sched, std::uint64_t seed, int draws_per_sample) {
    if (samples.empty()) throw std::invalid_argument("eval_loss: empty sample list");
    nn::NoGradGuard ng;
    Rng rng(mix_seed(seed, 0xe7a1ULL));
    double acc = 0.0;
    long n = 0;
    for (const TrainSample& s : samples) {
        for (int d = 0; d < draws_per_sample; ++d) {
            const int t = rng.uniform_int(1, sched.total_steps);
            Tensor noise(codec.encode(s.clean).data.shape);
            rng.fill_normal(noise);
            acc += training_loss(model, codec, s.clean, s.degraded, prompt, t, noise, sched)
                       ->val.data[0];
            ++n;
        }
    }
    return acc / n;
}

namespace {
const char* kTaskOrder[5] = {"dehaze", "derain", "denoise", "mp4", "sr4"};
}

AblationTable run_ablation(const DenoiserModel& model, const Codec& codec,
                           const std::vector<AblationClip>& clips, const RestoreConfig& base_cfg,
                           int threads) {
    if (clips.empty()) throw std::invalid_argument("run_ablation: no clips");

    struct RowSpec {
        const char* name;
        bool tpg, inversion, sw_cfa;
    };
    const RowSpec specs[4] = {
        {"T+I", true, true, false},
        {"T+S", true, false, true},
        {"I+S", false, true, true},
        {"full", true, true, true},
    };

    // clips are independent; per-clip results land in fixed slots and are
    // reduced in clip order afterwards, so thread count cannot change output
    std::vector<std::array<MetricsRow, 4>> per_clip(clips.size());
    auto work = [&](std::size_t ci) {
        for (int r = 0; r < 4; ++r) {
            RestoreConfig cfg = base_cfg;
            cfg.task = clips[ci].task;
            cfg.mode = specs[r].sw_cfa
                           ? AttentionMode::sliding_window(base_cfg.mode.window_radius)
                           : AttentionMode::self_attention();
            cfg.use_inversion = specs[r].inversion;
            cfg.neutral_prompt = !specs[r].tpg;
            per_clip[ci][r] =
                restore_video(model, codec, clips[ci].degraded, cfg, &clips[ci].clean).metrics;
        }
    };

    if (threads <= 1) {
        for (std::size_t ci = 0; ci < clips.size(); ++ci) work(ci);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        const int n = std::min<int>(threads, static_cast<int>(clips.size()));
        for (int w = 0; w < n; ++w)
            pool.emplace_back([&] {
                for (std::size_t ci = next.fetch_add(1); ci < clips.size();
                     ci = next.fetch_add(1))
                    work(ci);
            });
        for (std::thread& th : pool) th.join();
    }

    AblationTable table;
    for (int r = 0; r < 4; ++r) {
        AblationRow row;
        row.name = specs[r].name;
        row.tpg = specs[r].tpg;
        row.inversion = specs[r].inversion;
        row.sw_cfa = specs[r].sw_cfa;
        row.per_task.resize(5);
        for (std::size_t ci = 0; ci < clips.size(); ++ci) {
            AblationCell& cell = row.per_task[static_cast<int>(clips[ci].task)];
            cell.fc += per_clip[ci][r].fc;
            cell.we += per_clip[ci][r].we;
            cell.psnr += per_clip[ci][r].psnr_vs_clean;
            ++cell.clips;
        }
        for (AblationCell& cell : row.per_task)
            if (cell.clips > 0) {
                cell.fc /= cell.clips;
                cell.we /= cell.clips;
                cell.psnr /= cell.clips;
            }
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string AblationTable::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "config,TPG,Inv,SW-CFA";
    for (const char* t : kTaskOrder) os << "," << t << "_FC," << t << "_WE," << t << "_PSNR";
    os << "\n";
    for (const AblationRow& row : rows) {
        os << row.name << "," << (row.tpg ? 1 : 0) << "," << (row.inversion ? 1 : 0) << ","
           << (row.sw_cfa ? 1 : 0);
        for (const AblationCell& cell : row.per_task)
            os << "," << cell.fc << "," << cell.we << "," << cell.psnr;
        os << "\n";
    }
    return os.str();
}

// Wall-clock timings stay out of the report so identical runs produce
// byte-identical files; the CLI logs elapsed time to stderr instead.
std::string restore_report_json(const RestoreConfig& cfg, const std::string& clip_id,
                                const MetricsRow& row) {
    nlohmann::json j;
    j["clip"] = clip_id;
    j["config"] = {{"task", task_name(cfg.task)},
                   {"mode", cfg.mode.variant == AttentionVariant::SelfAttention ? "self"
                            : cfg.mode.variant == AttentionVariant::FirstFrameCfa
                                ? "first"
                                : "swcfa"},
                   {"window_radius", cfg.mode.window_radius},
                   {"inversion_steps", cfg.inversion_steps},
                   {"sampling_steps", cfg.sampling_steps},
                   {"use_inversion", cfg.use_inversion},
                   {"neutral_prompt", cfg.neutral_prompt},
                   {"seed", cfg.seed},
                   {"total_steps", cfg.total_steps},
                   {"beta_start", cfg.beta_start},
                   {"beta_end", cfg.beta_end}};
    j["metrics"] = {{"FC", row.fc}, {"WE", row.we}};
    if (row.has_psnr) j["metrics"]["PSNR"] = row.psnr_vs_clean;
    return j.dump(2) + "\n";
}

}  // namespace tdm
