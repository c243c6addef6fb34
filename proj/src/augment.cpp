#include "h2m/augment.hpp"

#include <numeric>

#include "h2m/codec.hpp"
#include "h2m/error.hpp"
#include "h2m/ops.hpp"
#include "h2m/rng.hpp"

namespace h2m {

std::string drop_domain_name(DropDomain d) { return d == DropDomain::image ? "image" : "latent"; }

DropDomain parse_drop_domain(const std::string& name) {
    if (name == "image") return DropDomain::image;
    if (name == "latent") return DropDomain::latent;
    throw ValidationError("unknown drop_domain '" + name + "' (expected image or latent)");
}

void PatchDropConfig::validate(std::size_t canvas) const {
    if (!(drop_rate >= 0.0 && drop_rate <= 1.0))
        throw ContractError("drop_rate " + std::to_string(drop_rate) + " outside [0, 1]");
    if (patch_size > 0 && canvas % patch_size != 0)
        throw ContractError("patch_size " + std::to_string(patch_size) + " does not tile a " + std::to_string(canvas) +
                            "-pixel canvas");
}

void NoiseAugConfig::validate() const {
    if (!(sigma >= 0.0)) throw ContractError("noise sigma must be >= 0");
}

double PatchMask::retained_fraction() const {
    if (keep.empty()) return 1.0;
    return static_cast<double>(std::accumulate(keep.begin(), keep.end(), std::size_t{0})) /
           static_cast<double>(keep.size());
}

PatchMask make_mask(const PatchDropConfig& cfg, Rng& rng, std::size_t canvas) {
    cfg.validate(canvas);
    PatchMask m;
    if (!cfg.enabled()) return m;
    m.side = canvas / cfg.patch_size;
    m.keep.resize(m.side * m.side);
    for (auto& k : m.keep) k = rng.uniform() >= cfg.drop_rate ? 1 : 0;
    return m;
}

Image patch_drop(const Image& frame, const PatchMask& mask, std::size_t patch_size) {
    if (mask.keep.empty()) return frame;
    if (frame.width != frame.height || patch_size == 0 || mask.side * patch_size != frame.width)
        throw ContractError("patch_drop: " + std::to_string(mask.side) + "x" + std::to_string(mask.side) +
                            " mask of " + std::to_string(patch_size) + "-pixel patches does not tile a " +
                            std::to_string(frame.width) + "x" + std::to_string(frame.height) + " frame");
    Image out = frame;
    for (std::size_t y = 0; y < frame.height; ++y)
        for (std::size_t x = 0; x < frame.width; ++x)
            if (!mask.keep[(y / patch_size) * mask.side + x / patch_size]) out.set(x, y, {0.0, 0.0, 0.0});
    return out;
}

Tensor patch_drop_latent(const Tensor& latent, const PatchMask& mask, std::size_t cells) {
    if (mask.keep.empty()) return latent;
    const auto& s = latent.shape();
    if (s.size() != 3 || s[1] != s[2] || cells == 0 || mask.side * cells != s[1])
        throw ContractError("patch_drop_latent: mask does not tile latent " + shape_str(s));
    std::vector<double> v(latent.data().begin(), latent.data().end());
    for (std::size_t c = 0; c < s[0]; ++c)
        for (std::size_t y = 0; y < s[1]; ++y)
            for (std::size_t x = 0; x < s[2]; ++x)
                if (!mask.keep[(y / cells) * mask.side + x / cells]) v[(c * s[1] + y) * s[2] + x] = 0.0;
    return Tensor::from(s, std::move(v));
}

std::size_t latent_patch_cells(std::size_t patch_size) { return std::max<std::size_t>(1, patch_size / 4); }

namespace {

PatchMask draw_mask(const PatchDropConfig& pd, Rng& rng, std::size_t image_side) {
    if (pd.domain == DropDomain::image) return make_mask(pd, rng, image_side);
    PatchDropConfig cells = pd;
    cells.patch_size = pd.enabled() ? latent_patch_cells(pd.patch_size) : 0;
    return make_mask(cells, rng, kLatentSide);
}

Tensor add_noise(Tensor z, const NoiseAugConfig& na, Rng& rng) {
    if (na.sigma == 0.0) return z;
    return add(z, randn(z.shape(), rng, na.sigma));
}

}  // namespace

Tensor augment_motion_frame(const Image& frame, const PatchDropConfig& pd, const NoiseAugConfig& na,
                            const LatentCodec& codec, Rng& rng) {
    pd.validate(frame.width);
    na.validate();
    const PatchMask mask = draw_mask(pd, rng, frame.width);
    Tensor z;
    if (pd.domain == DropDomain::image) {
        z = codec.encode_frame(patch_drop(frame, mask, pd.patch_size));
    } else {
        z = patch_drop_latent(codec.encode_frame(frame), mask, pd.enabled() ? latent_patch_cells(pd.patch_size) : 0);
    }
    return add_noise(std::move(z), na, rng);
}

Tensor augment_motion_frames(const std::vector<Image>& frames, const PatchDropConfig& pd, const NoiseAugConfig& na,
                             const LatentCodec& codec, const Rng& rng) {
    if (frames.empty()) throw ContractError("augment_motion_frames: no frames");
    pd.validate(frames[0].width);
    na.validate();
    std::vector<Rng> streams;
    std::vector<PatchMask> masks;
    std::vector<Image> dropped;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        streams.push_back(rng.split(i));
        masks.push_back(draw_mask(pd, streams.back(), frames[i].width));
        dropped.push_back(pd.domain == DropDomain::image ? patch_drop(frames[i], masks.back(), pd.patch_size)
                                                         : frames[i]);
    }
    const Tensor encoded = codec.encode_frames(dropped);
    const std::size_t per = kLatentChannels * kLatentTokens;
    std::vector<double> out;
    out.reserve(encoded.numel());
    const Shape one{kLatentChannels, kLatentSide, kLatentSide};
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto d = encoded.data().subspan(i * per, per);
        Tensor z = Tensor::from(one, {d.begin(), d.end()});
        if (pd.domain == DropDomain::latent)
            z = patch_drop_latent(z, masks[i], pd.enabled() ? latent_patch_cells(pd.patch_size) : 0);
        z = add_noise(std::move(z), na, streams[i]);
        out.insert(out.end(), z.data().begin(), z.data().end());
    }
    return Tensor::from({frames.size(), kLatentChannels, kLatentSide, kLatentSide}, std::move(out));
}

}  // namespace h2m
