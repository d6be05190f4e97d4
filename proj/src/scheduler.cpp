#include "tdm/scheduler.hpp"

#include <cmath>
#include <stdexcept>

namespace tdm {

double Schedule::alpha_bar(int t) const {
    if (t < 0 || t > total_steps) throw std::invalid_argument("timestep out of range");
    return t == 0 ? alpha_bar_zero : alpha_bars[t - 1];
}

Schedule make_schedule(int total_steps, double beta_start, double beta_end, BetaKind kind) {
    if (total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
    if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
        throw std::invalid_argument("beta out of range (0,1)");
    if (beta_start > beta_end) throw std::invalid_argument("beta_start must be <= beta_end");

    Schedule s;
    s.total_steps = total_steps;
    s.betas.resize(total_steps);
    s.alpha_bars.resize(total_steps);

    for (int i = 0; i < total_steps; ++i) {
        const double f = total_steps == 1 ? 0.0 : static_cast<double>(i) / (total_steps - 1);
        if (kind == BetaKind::Linear) {
            s.betas[i] = beta_start + f * (beta_end - beta_start);
        } else {
            const double r = std::sqrt(beta_start) + f * (std::sqrt(beta_end) - std::sqrt(beta_start));
            s.betas[i] = r * r;
        }
    }

    double prod = 1.0;
    for (int i = 0; i < total_steps; ++i) {
        prod *= 1.0 - s.betas[i];
        s.alpha_bars[i] = prod;
    }
    return s;
}

Schedule default_schedule() {
    return make_schedule(kDefaultTotalSteps, kDefaultBetaStart, kDefaultBetaEnd,
                         BetaKind::ScaledLinear);
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& noise, const Schedule& sched) {
    check_same_shape(z0, noise, "forward_diffuse");
    const double abar = sched.alpha_bar(t);
    const double a = std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    Tensor out = z0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a * z0.data[i] + b * noise.data[i];
    return out;
}

// Shared form of Eq.-(3)/(4) style updates: move z from noise level abar_from
// to abar_to with a fixed eps estimate.
static Tensor ddim_move(const Tensor& z, const Tensor& eps, double abar_from, double abar_to) {
    check_same_shape(z, eps, "ddim step");
    const double sa_from = std::sqrt(abar_from);
    const double sa_to = std::sqrt(abar_to);
    const double sb_from = std::sqrt(1.0 - abar_from);
    const double sb_to = std::sqrt(1.0 - abar_to);
    Tensor out = z;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double pred_z0 = (z.data[i] - sb_from * eps.data[i]) / sa_from;
        out.data[i] = sa_to * pred_z0 + sb_to * eps.data[i];
    }
    return out;
}

Tensor ddim_backward_step(const Tensor& z_t, const Tensor& eps, int t, int t_prev,
                          const Schedule& sched) {
    if (t_prev >= t) throw std::invalid_argument("ddim_backward_step: t_prev must be < t");
    return ddim_move(z_t, eps, sched.alpha_bar(t), sched.alpha_bar(t_prev));
}

Tensor ddim_inversion_step(const Tensor& z_t, const Tensor& eps, int t, int t_next,
                           const Schedule& sched) {
    if (t_next <= t) throw std::invalid_argument("ddim_inversion_step: t_next must be > t");
    return ddim_move(z_t, eps, sched.alpha_bar(t), sched.alpha_bar(t_next));
}

TimestepLadder select_timesteps(const Schedule& sched, int n_steps) {
    if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
    if (n_steps > sched.total_steps)
        throw std::invalid_argument("n_steps exceeds schedule total_steps");
    const int stride = sched.total_steps / n_steps;
    TimestepLadder ladder;
    ladder.count = n_steps;
    ladder.steps.resize(n_steps);
    for (int k = 0; k < n_steps; ++k)
        ladder.steps[k] = sched.total_steps - (n_steps - 1 - k) * stride;
    return ladder;
}

}  // namespace tdm
