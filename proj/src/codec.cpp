#include "tdm/codec.hpp"

#include <cmath>
#include <stdexcept>

#include "tdm/rng.hpp"

namespace tdm {

namespace {
constexpr std::uint64_t kDefaultCodecSeed = 0x7dc0dec5eedULL;

// Orthonormalize a seeded Gaussian matrix by modified Gram-Schmidt.
Tensor orthonormal_matrix(int n, std::uint64_t seed) {
    Rng rng(seed);
    Tensor m({n, n});
    rng.fill_normal(m);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < i; ++j) {
            double proj = 0.0;
            for (int c = 0; c < n; ++c) proj += m.at(i, c) * m.at(j, c);
            for (int c = 0; c < n; ++c) m.at(i, c) -= proj * m.at(j, c);
        }
        double nrm = 0.0;
        for (int c = 0; c < n; ++c) nrm += m.at(i, c) * m.at(i, c);
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) throw std::runtime_error("codec: degenerate mixing matrix");
        for (int c = 0; c < n; ++c) m.at(i, c) /= nrm;
    }
    return m;
}
}  // namespace

Codec::Codec(int channels, int patch, std::uint64_t seed)
    : channels_(channels),
      patch_(patch),
      latent_channels_(channels * patch * patch),
      mix_(orthonormal_matrix(channels * patch * patch, seed)) {
    if (channels < 1 || patch < 1) throw std::invalid_argument("codec: bad dimensions");
}

Codec Codec::with_defaults(int channels) { return Codec(channels, 4, kDefaultCodecSeed); }

LatentGrid Codec::encode(const Tensor& image) const {
    if (image.rank() != 3 || image.shape[0] != channels_)
        throw std::invalid_argument("codec encode: expected " + std::to_string(channels_) +
                                    " x H x W image");
    const int h = image.shape[1], w = image.shape[2];
    if (h % patch_ != 0 || w % patch_ != 0)
        throw std::invalid_argument("codec encode: H and W must be divisible by patch size");

    const int lh = h / patch_, lw = w / patch_;
    // space-to-depth: latent channel = (c * p + dy) * p + dx
    Tensor folded({latent_channels_, lh, lw});
    for (int c = 0; c < channels_; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int lc = (c * patch_ + y % patch_) * patch_ + x % patch_;
                folded.at(lc, y / patch_, x / patch_) = image.at(c, y, x);
            }

    LatentGrid out;
    out.patch = patch_;
    out.source_shape = {channels_, h, w};
    out.data = Tensor({latent_channels_, lh, lw});
    for (int y = 0; y < lh; ++y)
        for (int x = 0; x < lw; ++x)
            for (int oc = 0; oc < latent_channels_; ++oc) {
                double s = 0.0;
                for (int ic = 0; ic < latent_channels_; ++ic)
                    s += mix_.at(oc, ic) * folded.at(ic, y, x);
                out.data.at(oc, y, x) = s;
            }
    return out;
}

Tensor Codec::decode(const LatentGrid& z) const {
    if (z.patch != patch_ || z.source_shape[0] != channels_)
        throw std::invalid_argument("codec decode: latent metadata does not match codec");
    if (z.data.rank() != 3 || z.data.shape[0] != latent_channels_)
        throw std::invalid_argument("codec decode: malformed latent tensor");
    const int lh = z.data.shape[1], lw = z.data.shape[2];
    if (z.source_shape[1] != lh * patch_ || z.source_shape[2] != lw * patch_)
        throw std::invalid_argument("codec decode: latent extent does not match source shape");

    Tensor folded({latent_channels_, lh, lw});
    for (int y = 0; y < lh; ++y)
        for (int x = 0; x < lw; ++x)
            for (int oc = 0; oc < latent_channels_; ++oc) {
                double s = 0.0;
                for (int ic = 0; ic < latent_channels_; ++ic)
                    s += mix_.at(ic, oc) * z.data.at(ic, y, x);  // transpose mix
                folded.at(oc, y, x) = s;
            }

    Tensor image({channels_, z.source_shape[1], z.source_shape[2]});
    for (int c = 0; c < channels_; ++c)
        for (int y = 0; y < image.shape[1]; ++y)
            for (int x = 0; x < image.shape[2]; ++x) {
                const int lc = (c * patch_ + y % patch_) * patch_ + x % patch_;
                image.at(c, y, x) = folded.at(lc, y / patch_, x / patch_);
            }
    return image;
}

}  // namespace tdm
