#pragma once

#include <vector>

#include "tdm/tensor.hpp"

namespace tdm {

enum class BetaKind { Linear, ScaledLinear };

// Diffusion noise schedule. betas[i] and alpha_bars[i] hold the values for
// timestep t = i + 1; timestep 0 is the clean level with alpha_bar_zero = 1.
struct Schedule {
    int total_steps = 0;
    std::vector<double> betas;
    std::vector<double> alpha_bars;
    double alpha_bar_zero = 1.0;

    // alpha_bar at timestep t in [0, total_steps].
    double alpha_bar(int t) const;
};

struct TimestepLadder {
    std::vector<int> steps;  // ascending, unique, in [1, T]
    int count = 0;
};

// SD v1.5 convention; the default schedule for the whole pipeline.
inline constexpr int kDefaultTotalSteps = 1000;
inline constexpr double kDefaultBetaStart = 8.5e-4;
inline constexpr double kDefaultBetaEnd = 1.2e-2;

Schedule make_schedule(int total_steps, double beta_start, double beta_end, BetaKind kind);
Schedule default_schedule();

// z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * noise. t = 0 is the identity level.
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& noise, const Schedule& sched);

// Deterministic DDIM step down the ladder (t -> t_prev, t_prev may be 0).
Tensor ddim_backward_step(const Tensor& z_t, const Tensor& eps, int t, int t_prev,
                          const Schedule& sched);

// DDIM inversion step up the ladder (t -> t_next, t may be 0).
Tensor ddim_inversion_step(const Tensor& z_t, const Tensor& eps, int t, int t_next,
                           const Schedule& sched);

// n_steps timesteps with trailing uniform stride; the largest step is exactly T.
TimestepLadder select_timesteps(const Schedule& sched, int n_steps);

}  // namespace tdm
