#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "tdm/tensor.hpp"

namespace tdm {

// Deterministic RNG. Gaussian draws use Box-Muller on raw mt19937_64 output
// so sequences are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    void fill_normal(Tensor& t, double stddev = 1.0) {
        for (double& v : t.data) v = stddev * normal();
    }

    void fill_uniform(Tensor& t, double lo, double hi) {
        for (double& v : t.data) v = uniform(lo, hi);
    }

private:
    std::mt19937_64 gen_;
};

// Stable seed mixing for derived streams (splitmix64 step).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace tdm
