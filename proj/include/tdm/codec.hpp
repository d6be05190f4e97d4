#pragma once

#include <array>
#include <cstdint>

#include "tdm/tensor.hpp"

namespace tdm {

// Latent tensor plus the metadata needed to invert it.
struct LatentGrid {
    Tensor data;  // C*p*p x H/p x W/p
    int patch = 0;
    std::array<int, 3> source_shape{};  // C, H, W
};

// Fixed, exactly invertible stand-in for a learned latent autoencoder:
// space-to-depth by `patch` followed by a seeded orthonormal channel mix.
class Codec {
public:
    Codec(int channels, int patch, std::uint64_t seed);

    LatentGrid encode(const Tensor& image) const;
    Tensor decode(const LatentGrid& z) const;

    int channels() const { return channels_; }
    int patch() const { return patch_; }
    int latent_channels() const { return latent_channels_; }

    static Codec with_defaults(int channels = 3);

private:
    int channels_;
    int patch_;
    int latent_channels_;
    Tensor mix_;  // orthonormal latent_channels x latent_channels
};

}  // namespace tdm
