#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "h2m/image.hpp"
#include "h2m/tensor.hpp"

namespace h2m {

class Rng;
class LatentCodec;

enum class DropDomain { image, latent };

std::string drop_domain_name(DropDomain d);
DropDomain parse_drop_domain(const std::string& name);

struct PatchDropConfig {
    std::size_t patch_size = 1;  // pixels; 0 disables
    double drop_rate = 0.25;
    DropDomain domain = DropDomain::image;

    bool enabled() const { return patch_size > 0; }
    // Throws ContractError when p does not tile the canvas or r is outside [0, 1].
    void validate(std::size_t canvas = 32) const;
    bool operator==(const PatchDropConfig&) const = default;
};

struct NoiseAugConfig {
    double sigma = 0.1;  // latent units
    void validate() const;
    bool operator==(const NoiseAugConfig&) const = default;
};

// Square keep/drop grid; a disabled config yields an empty grid (nothing dropped).
struct PatchMask {
    std::size_t side = 0;
    std::vector<std::uint8_t> keep;  // row-major, 1 = retained

    std::size_t count() const { return keep.size(); }
    double retained_fraction() const;
};

// Each of the (canvas / p)^2 patches is kept when xi >= r, xi ~ U[0, 1).
PatchMask make_mask(const PatchDropConfig& cfg, Rng& rng, std::size_t canvas = 32);

// Retained patches are copied untouched; dropped ones become exact zeros.
Image patch_drop(const Image& frame, const PatchMask& mask, std::size_t patch_size);
// Same on a [C, H, W] latent with patches of `cells` latent cells.
Tensor patch_drop_latent(const Tensor& latent, const PatchMask& mask, std::size_t cells);
// Latent patch edge used by the latent-domain variant: one cell per 4 pixels, at least one.
std::size_t latent_patch_cells(std::size_t patch_size);

// z_hat = E(patch_drop(I)) + eta, eta ~ N(0, sigma^2 I). Latent domain drops
// after encoding instead.
Tensor augment_motion_frame(const Image& frame, const PatchDropConfig& pd, const NoiseAugConfig& na,
                            const LatentCodec& codec, Rng& rng);
// Batch form [N, 8, 8, 8]; frame i draws from rng.split(i), so it matches the
// single-frame call with that substream up to rounding.
Tensor augment_motion_frames(const std::vector<Image>& frames, const PatchDropConfig& pd, const NoiseAugConfig& na,
                             const LatentCodec& codec, const Rng& rng);

}  // namespace h2m
