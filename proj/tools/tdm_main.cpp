// tdm: synthesize clips, fine-tune the control branch, invert/restore video
// and evaluate temporal-consistency metrics, all from reproducible seeds.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tdm/image_io.hpp"
#include "tdm/metrics.hpp"
#include "tdm/pipeline.hpp"
#include "tdm/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::uint64_t seed = 0;
    int threads = 1;
    std::string config_path;
};

tdm::AttentionMode parse_mode(const std::string& mode, int n) {
    if (n < 0) throw CLI::ValidationError("--N", "window_radius must be >= 0");
    if (mode == "self") return tdm::AttentionMode::self_attention();
    if (mode == "first") return tdm::AttentionMode::first_frame();
    if (mode == "swcfa") return tdm::AttentionMode::sliding_window(n);
    throw CLI::ValidationError("--mode", "mode must be one of self|first|swcfa");
}

std::pair<int, int> parse_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos)
        throw CLI::ValidationError("--size", "size must look like 64x64");
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

std::pair<int, int> parse_velocity(const std::string& s) {
    const auto c = s.find(',');
    if (c == std::string::npos)
        throw CLI::ValidationError("--velocity", "velocity must look like dx,dy");
    return {std::stoi(s.substr(0, c)), std::stoi(s.substr(c + 1))};
}

// JSON config: file values become defaults, flags override, unknown keys are
// rejected against the subcommand's option list.
void apply_config_file(CLI::App* cmd, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("--config", "cannot open config file " + path);
    json cfg;
    try {
        in >> cfg;
    } catch (const std::exception& e) {
        throw CLI::ValidationError("--config", std::string("invalid JSON: ") + e.what());
    }
    if (!cfg.is_object()) throw CLI::ValidationError("--config", "config root must be an object");

    for (const auto& [key, value] : cfg.items()) {
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (!opt) throw CLI::ValidationError("--config", "unknown config key: " + key);
        std::string text = value.is_string() ? value.get<std::string>() : value.dump();
        opt->default_val(text);
    }
}

std::string find_config_arg(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return {};
}

tdm::DenoiserModel model_from_opts(const std::string& model_path, std::uint64_t seed,
                                   int channels) {
    if (!model_path.empty()) return tdm::load_checkpoint(model_path);
    tdm::DenoiserDims dims;
    dims.image_channels = channels;
    return tdm::init_denoiser(seed, dims);
}

std::vector<tdm::TrainSample> make_training_pairs(const std::vector<tdm::Task>& tasks, int pairs,
                                                  int size, std::uint64_t seed) {
    const tdm::CleanPattern patterns[3] = {tdm::CleanPattern::Checker,
                                           tdm::CleanPattern::GradientBlobs,
                                           tdm::CleanPattern::TexturedNoiseField};
    std::vector<tdm::TrainSample> out;
    int idx = 0;
    for (tdm::Task task : tasks)
        for (int p = 0; p < pairs; ++p, ++idx) {
            const std::uint64_t s = tdm::mix_seed(seed, idx);
            tdm::FrameSequence clean = tdm::generate_clean_video(patterns[idx % 3], 3, size, size,
                                                                 1, 0, 0, s);
            tdm::FrameSequence degraded = tdm::degrade(clean, tdm::default_spec(task, s));
            out.push_back({clean.frames[0], degraded.frames[0], task});
        }
    return out;
}

int cmd_synth(const CommonOpts& common, const std::string& out_dir, const std::string& pattern,
              const std::string& size, int channels, int frames, const std::string& velocity,
              const std::string& task, bool f32) {
    const auto [h, w] = parse_size(size);
    const auto [dx, dy] = parse_velocity(velocity);
    tdm::FrameSequence clean = tdm::generate_clean_video(tdm::pattern_from_name(pattern), channels,
                                                         h, w, frames, dx, dy, common.seed);
    if (task.empty()) {
        tdm::write_clip(out_dir, clean, nullptr, f32);
        std::cerr << "wrote " << frames << " clean frames to " << out_dir << "\n";
        return 0;
    }
    tdm::DegradationSpec spec = tdm::default_spec(tdm::task_from_name(task), common.seed);
    tdm::FrameSequence degraded = tdm::degrade(clean, spec);
    tdm::write_clip(out_dir, degraded, &spec, f32);
    tdm::write_clip(out_dir + "/clean", clean, nullptr, f32);
    std::cerr << "wrote " << frames << " degraded frames to " << out_dir << " (clean in "
              << out_dir << "/clean)\n";
    return 0;
}

int cmd_train(const CommonOpts& common, const std::string& out_path, const std::string& tasks_csv,
              int pairs, int epochs, int size, double lr) {
    std::vector<tdm::Task> tasks;
    std::stringstream ss(tasks_csv);
    std::string item;
    while (std::getline(ss, item, ',')) tasks.push_back(tdm::task_from_name(item));
    if (tasks.empty()) throw CLI::ValidationError("--tasks", "at least one task required");

    tdm::DenoiserDims dims;
    tdm::DenoiserModel model = tdm::init_denoiser(common.seed, dims);
    const tdm::Codec codec = tdm::Codec::with_defaults(dims.image_channels);
    const tdm::Schedule sched = tdm::default_schedule();

    std::vector<tdm::TrainSample> data = make_training_pairs(tasks, pairs, size, common.seed);
    tdm::FineTuneResult ft = tdm::fine_tune(model, codec, data, epochs, lr, common.seed, sched);

    tdm::save_checkpoint(model, out_path);
    std::ofstream losses(out_path + ".loss.csv");
    losses << "step,loss\n";
    losses.precision(10);
    for (std::size_t i = 0; i < ft.loss_history.size(); ++i)
        losses << i << "," << ft.loss_history[i] << "\n";

    const int w = 50;
    std::cerr << "trained " << ft.loss_history.size() << " steps; smoothed loss "
              << tdm::smoothed_head(ft.loss_history, w) << " -> "
              << tdm::smoothed_tail(ft.loss_history, w) << "\n";
    return 0;
}

int cmd_restore(const CommonOpts& common, const std::string& in_dir, const std::string& out_dir,
                const std::string& model_path, const std::string& task, const std::string& mode,
                int n, int inversion_steps, int sampling_steps, bool no_inversion,
                bool neutral_prompt, const std::string& ref_dir, bool f32, bool invert_only) {
    tdm::FrameSequence degraded = tdm::read_clip(in_dir);
    tdm::FrameSequence clean;
    if (!ref_dir.empty()) clean = tdm::read_clip(ref_dir);

    const int channels = degraded.frames[0].shape[0];
    tdm::DenoiserModel model = model_from_opts(model_path, common.seed, channels);
    const tdm::Codec codec = tdm::Codec::with_defaults(channels);

    tdm::RestoreConfig cfg;
    cfg.task = tdm::task_from_name(task);
    cfg.mode = parse_mode(mode, n);
    cfg.inversion_steps = inversion_steps;
    cfg.sampling_steps = sampling_steps;
    cfg.use_inversion = !no_inversion;
    cfg.neutral_prompt = neutral_prompt;
    cfg.seed = common.seed;

    const auto start = std::chrono::steady_clock::now();

    if (invert_only) {
        tdm::VideoLatents latents = tdm::invert_video(model, codec, degraded, cfg);
        fs::create_directories(out_dir);
        char name[32];
        for (int i = 0; i < static_cast<int>(latents.latents.size()); ++i) {
            std::snprintf(name, sizeof(name), "latent_%05d.f32", i);
            tdm::write_f32(out_dir + "/" + name, latents.latents[i].data);
        }
        json manifest;
        const tdm::LatentGrid& g0 = latents.latents[0];
        manifest["latent_shape"] = {g0.data.shape[0], g0.data.shape[1], g0.data.shape[2]};
        manifest["timestep_level"] = latents.timestep_level;
        manifest["n_frames"] = latents.latents.size();
        std::ofstream(out_dir + "/latents.json") << manifest.dump(2) << "\n";
        std::cerr << "inverted " << latents.latents.size() << " frames to level "
                  << latents.timestep_level << "\n";
        return 0;
    }

    tdm::RestoreResult res =
        tdm::restore_video(model, codec, degraded, cfg, ref_dir.empty() ? nullptr : &clean);
    tdm::write_clip(out_dir, res.restored, nullptr, f32);
    std::ofstream(out_dir + "/report.json")
        << tdm::restore_report_json(cfg, in_dir, res.metrics);

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cerr << "restored " << res.restored.n_frames() << " frames in " << secs << "s; FC "
              << res.metrics.fc << " WE " << res.metrics.we;
    if (res.metrics.has_psnr) std::cerr << " PSNR " << res.metrics.psnr_vs_clean;
    std::cerr << "\n";
    return 0;
}

int cmd_metrics(const std::string& in_dir, const std::string& ref_dir,
                const std::string& out_csv) {
    tdm::FrameSequence clip = tdm::read_clip(in_dir);
    tdm::MetricsRow row;
    row.fc = tdm::frame_consistency(clip);
    if (clip.motion_spec) {
        row.we = tdm::warping_error(clip, tdm::flows_from_motion_spec(clip), /*wrap=*/true);
    } else {
        std::vector<tdm::FlowField> flows;
        for (int i = 0; i + 1 < clip.n_frames(); ++i)
            flows.push_back(tdm::estimate_flow(clip.frames[i], clip.frames[i + 1]));
        row.we = tdm::warping_error(clip, flows, /*wrap=*/false);
    }
    std::string task = "-";
    if (!ref_dir.empty()) {
        tdm::FrameSequence ref = tdm::read_clip(ref_dir);
        if (ref.n_frames() != clip.n_frames())
            throw std::runtime_error("metrics: clip and reference frame counts differ");
        double acc = 0.0;
        for (int i = 0; i < clip.n_frames(); ++i)
            acc += tdm::psnr(clip.frames[i], ref.frames[i]);
        row.psnr_vs_clean = acc / clip.n_frames();
        row.has_psnr = true;
    }

    std::ostringstream csv;
    csv << tdm::metrics_csv_header() << "\n"
        << tdm::metrics_csv_line(in_dir, task, "-", row) << "\n";
    if (out_csv.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream out(out_csv);
        if (!out) throw std::runtime_error("metrics: cannot write " + out_csv);
        out << csv.str();
    }
    return 0;
}

int cmd_ablate(const CommonOpts& common, const std::string& in_root, const std::string& out_dir,
               const std::string& model_path, int clips_per_task, int size, int frames, int n) {
    tdm::DenoiserModel model = model_from_opts(model_path, common.seed, 3);
    const tdm::Codec codec = tdm::Codec::with_defaults(3);

    std::vector<tdm::AblationClip> clips;
    if (!in_root.empty()) {
        // every directory holding a manifest with a task is one degraded clip;
        // its clean reference lives in <dir>/clean
        for (const auto& entry : fs::recursive_directory_iterator(in_root)) {
            if (entry.path().filename() != "manifest.json") continue;
            const fs::path dir = entry.path().parent_path();
            if (dir.filename() == "clean") continue;
            std::ifstream in(entry.path());
            json manifest;
            in >> manifest;
            if (!manifest.contains("task")) continue;
            tdm::AblationClip clip;
            clip.task = tdm::task_from_name(manifest["task"].get<std::string>());
            clip.degraded = tdm::read_clip(dir.string());
            clip.clean = tdm::read_clip((dir / "clean").string());
            clip.id = dir.string();
            clips.push_back(std::move(clip));
        }
        if (clips.empty()) throw std::runtime_error("ablate: no clips found under " + in_root);
    } else {
        const tdm::CleanPattern patterns[3] = {tdm::CleanPattern::Checker,
                                               tdm::CleanPattern::GradientBlobs,
                                               tdm::CleanPattern::TexturedNoiseField};
        int idx = 0;
        for (tdm::Task task : {tdm::Task::Dehaze, tdm::Task::Derain, tdm::Task::Denoise,
                               tdm::Task::Mp4, tdm::Task::Sr4})
            for (int ci = 0; ci < clips_per_task; ++ci, ++idx) {
                const std::uint64_t s = tdm::mix_seed(common.seed, 0xab1a7e + idx);
                tdm::AblationClip clip;
                clip.task = task;
                clip.clean = tdm::generate_clean_video(patterns[idx % 3], 3, size, size, frames,
                                                       1, (idx % 2 == 0) ? 0 : 1, s);
                clip.degraded = tdm::degrade(clip.clean, tdm::default_spec(task, s));
                clip.id = std::string(tdm::task_name(task)) + "/" + std::to_string(ci);
                clips.push_back(std::move(clip));
            }
    }

    tdm::RestoreConfig base;
    base.mode = tdm::AttentionMode::sliding_window(n);
    base.seed = common.seed;
    tdm::AblationTable table = tdm::run_ablation(model, codec, clips, base, common.threads);

    fs::create_directories(out_dir);
    std::ofstream(out_dir + "/ablation.csv") << table.to_csv();
    std::cout << table.to_csv();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporally-consistent diffusion video restoration (desk scale)"};
    app.require_subcommand(1);

    CommonOpts common;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic clip (optionally degraded)");
    std::string sy_out = "clip", sy_pattern = "checker", sy_size = "64x64", sy_velocity = "1,0";
    std::string sy_task;
    int sy_channels = 3, sy_frames = 8;
    bool sy_f32 = false;
    synth->add_option("--out", sy_out, "output clip directory");
    synth->add_option("--pattern", sy_pattern, "checker|gradient-blobs|textured-noise-field");
    synth->add_option("--size", sy_size, "frame size, e.g. 64x64");
    synth->add_option("--channels", sy_channels, "image channels (1 or 3)");
    synth->add_option("--frames", sy_frames, "number of frames");
    synth->add_option("--velocity", sy_velocity, "per-frame translation dx,dy");
    synth->add_option("--task", sy_task, "degrade with this task (writes clean to <out>/clean)");
    synth->add_flag("--f32", sy_f32, "also write raw float32 dumps");

    // train
    auto* train = app.add_subcommand("train", "fine-tune the control branch on synthetic pairs");
    std::string tr_out = "model.tdm", tr_tasks = "denoise";
    int tr_pairs = 50, tr_epochs = 10, tr_size = 48;
    double tr_lr = tdm::kDefaultLearningRate;
    train->add_option("--out", tr_out, "checkpoint output path");
    train->add_option("--tasks", tr_tasks, "comma-separated task list");
    train->add_option("--pairs", tr_pairs, "training pairs per task");
    train->add_option("--epochs", tr_epochs, "epochs over the pair set");
    train->add_option("--size", tr_size, "training image size");
    train->add_option("--lr", tr_lr, "learning rate");

    // restore / invert
    auto add_restore_opts = [&](CLI::App* cmd, bool invert_only) {
        struct Opts {
            std::string in, out = "restored", model, task = "denoise", mode = "swcfa", ref;
            int n = 3, inversion_steps = 10, sampling_steps = 32;
            bool no_inversion = false, neutral = false, f32 = false;
            bool invert_only = false;
        };
        auto opts = std::make_shared<Opts>();
        opts->invert_only = invert_only;
        cmd->add_option("--in", opts->in, "input clip directory")->required();
        cmd->add_option("--out", opts->out, "output directory");
        cmd->add_option("--model", opts->model, "checkpoint path (fresh seeded model if absent)");
        cmd->add_option("--task", opts->task, "restoration task");
        cmd->add_option("--mode", opts->mode, "attention mode: self|first|swcfa");
        cmd->add_option("--N", opts->n, "SW-CFA window radius");
        cmd->add_option("--inversion-steps", opts->inversion_steps, "DDIM inversion steps");
        cmd->add_option("--sampling-steps", opts->sampling_steps, "DDIM sampling steps");
        if (!invert_only) {
            cmd->add_flag("--no-inversion", opts->no_inversion,
                          "start from seeded Gaussian noise instead of DDIM inversion");
            cmd->add_flag("--neutral-prompt", opts->neutral, "zero prompt embedding (no TPG)");
            cmd->add_option("--ref", opts->ref, "clean reference clip for PSNR");
            cmd->add_flag("--f32", opts->f32, "also write raw float32 dumps");
        }
        cmd->callback([&common, opts] {
            cmd_restore(common, opts->in, opts->out, opts->model, opts->task, opts->mode, opts->n,
                        opts->inversion_steps, opts->sampling_steps, opts->no_inversion,
                        opts->neutral, opts->ref, opts->f32, opts->invert_only);
        });
    };
    auto* restore = app.add_subcommand("restore", "invert + sample a degraded clip");
    add_restore_opts(restore, false);
    auto* invert = app.add_subcommand("invert", "DDIM-invert a clip and dump latents");
    add_restore_opts(invert, true);

    // metrics
    auto* metrics = app.add_subcommand("metrics", "FC/WE/PSNR for a clip directory");
    std::string me_in, me_ref, me_out;
    metrics->add_option("--in", me_in, "clip directory")->required();
    metrics->add_option("--ref", me_ref, "clean reference directory (enables PSNR)");
    metrics->add_option("--out", me_out, "CSV output path (stdout if absent)");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run the four-configuration study");
    std::string ab_in, ab_out = "ablation", ab_model;
    int ab_clips = 10, ab_size = 32, ab_frames = 6, ab_n = 3;
    ablate->add_option("--in", ab_in, "root of prepared clips (seeded clips if absent)");
    ablate->add_option("--out", ab_out, "output directory");
    ablate->add_option("--model", ab_model, "checkpoint path");
    ablate->add_option("--clips", ab_clips, "clips per task when generating");
    ablate->add_option("--size", ab_size, "generated clip size");
    ablate->add_option("--frames", ab_frames, "generated clip frames");
    ablate->add_option("--N", ab_n, "SW-CFA window radius");

    for (CLI::App* cmd : {synth, train, restore, invert, metrics, ablate}) {
        cmd->add_option("--seed", common.seed, "master seed (default 0)");
        cmd->add_option("--threads", common.threads, "worker threads (default 1)");
        cmd->add_option("--config", common.config_path, "JSON config file; flags override");
    }

    synth->callback([&] {
        cmd_synth(common, sy_out, sy_pattern, sy_size, sy_channels, sy_frames, sy_velocity,
                  sy_task, sy_f32);
    });
    train->callback(
        [&] { cmd_train(common, tr_out, tr_tasks, tr_pairs, tr_epochs, tr_size, tr_lr); });
    metrics->callback([&] { cmd_metrics(me_in, me_ref, me_out); });
    ablate->callback([&] {
        cmd_ablate(common, ab_in, ab_out, ab_model, ab_clips, ab_size, ab_frames, ab_n);
    });

    try {
        const std::string cfg_path = find_config_arg(argc, argv);
        if (!cfg_path.empty()) {
            // defaults must be in place before parsing so flags can override
            app.preparse_callback([&](std::size_t) {});
            for (CLI::App* cmd : {synth, train, restore, invert, metrics, ablate})
                if (cmd->get_name() == std::string(argv[1] ? argv[1] : ""))
                    apply_config_file(cmd, cfg_path);
        }
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
