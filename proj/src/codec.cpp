#include "h2m/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "h2m/error.hpp"
#include "h2m/ops.hpp"
#include "h2m/optim.hpp"
#include "h2m/rng.hpp"

namespace h2m {

namespace {

constexpr std::size_t kSide = 32;
constexpr std::size_t kWidth = 32;

Tensor conv_weight(ParamSet& p, const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
    return p.add(name, randn(shape, rng, 1.4 / std::sqrt(static_cast<double>(fan_in))));
}

void add_conv(ParamSet& p, const std::string& name, std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
    conv_weight(p, name + ".w", {out, in, k, k}, in * k * k, rng);
    p.add(name + ".b", Tensor::zeros({out}));
}

void add_deconv(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, std::size_t k, Rng& rng) {
    conv_weight(p, name + ".w", {in, out, k, k}, in * k * k / 4, rng);
    p.add(name + ".b", Tensor::zeros({out}));
}

Tensor conv(const ParamSet& p, const std::string& name, const Tensor& x, std::size_t stride, std::size_t pad) {
    return conv2d(x, p.get(name + ".w"), p.get(name + ".b"), stride, pad);
}

Tensor deconv(const ParamSet& p, const std::string& name, const Tensor& x) {
    return conv_transpose2d(x, p.get(name + ".w"), p.get(name + ".b"), 2, 1);
}

void check_pixels(const Tensor& pixels) {
    const auto& s = pixels.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != kSide || s[3] != kSide)
        throw DimensionError("codec expects [N, 3, 32, 32] pixels, got " + shape_str(s));
}

void check_latents(const Tensor& z) {
    const auto& s = z.shape();
    if (s.size() != 4 || s[1] != kLatentChannels || s[2] != kLatentSide || s[3] != kLatentSide)
        throw DimensionError("codec expects [N, 8, 8, 8] latents, got " + shape_str(s));
}

}  // namespace

std::string latent_mode_name(LatentMode m) { return m == LatentMode::codec ? "codec" : "identity-debug"; }

LatentMode parse_latent_mode(const std::string& name) {
    if (name == "codec") return LatentMode::codec;
    if (name == "identity-debug") return LatentMode::identity_debug;
    throw ValidationError("unknown latent mode '" + name + "' (expected codec or identity-debug)");
}

LatentCodec LatentCodec::make(Rng& rng) {
    LatentCodec c;
    auto& p = c.params_;
    add_conv(p, "enc.c1", kWidth, 3, 4, rng);               // 32 -> 16
    add_conv(p, "enc.c1b", kWidth, kWidth, 3, rng);
    add_conv(p, "enc.c2", kWidth, kWidth, 4, rng);          // 16 -> 8
    add_conv(p, "enc.c3", kLatentChannels, kWidth, 3, rng);  // 8 -> 8
    add_conv(p, "dec.c1", kWidth, kLatentChannels, 3, rng);
    add_deconv(p, "dec.u1", kWidth, kWidth, 4, rng);  // 8 -> 16
    add_conv(p, "dec.c1b", kWidth, kWidth, 3, rng);
    add_deconv(p, "dec.u2", kWidth, 16, 4, rng);      // 16 -> 32
    add_conv(p, "dec.c2", 3, 16, 3, rng);
    return c;
}

LatentCodec LatentCodec::identity_debug() {
    LatentCodec c;
    c.mode_ = LatentMode::identity_debug;
    return c;
}

void LatentCodec::require_ready(const char* what) const {
    if (!ready()) throw StateError(std::string(what) + ": codec is untrained (train it or use identity-debug mode)");
}

Tensor LatentCodec::raw_encode(const Tensor& x) const {
    const auto& p = params_;
    Tensor h = silu(conv(p, "enc.c1", x, 2, 1));
    h = add(h, silu(conv(p, "enc.c1b", h, 1, 1)));
    h = silu(conv(p, "enc.c2", h, 2, 1));
    return conv(p, "enc.c3", h, 1, 1);
}

Tensor LatentCodec::raw_decode(const Tensor& z) const {
    const auto& p = params_;
    Tensor h = silu(conv(p, "dec.c1", z, 1, 1));
    h = silu(deconv(p, "dec.u1", h));
    h = add(h, silu(conv(p, "dec.c1b", h, 1, 1)));
    h = silu(deconv(p, "dec.u2", h));
    return conv(p, "dec.c2", h, 1, 1);
}

Tensor LatentCodec::reconstruct_raw(const Tensor& pixels) const {
    check_pixels(pixels);
    return raw_decode(raw_encode(pixels));
}

Tensor LatentCodec::encode_batch(const Tensor& pixels) const {
    check_pixels(pixels);
    const std::size_t n = pixels.dim(0);
    if (mode_ == LatentMode::identity_debug) {
        const auto v = pixels.data();
        std::vector<double> out(n * kLatentChannels * kLatentTokens, 0.0);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t y = 0; y < 16; ++y)
                for (std::size_t x = 0; x < 16; ++x) {
                    double g = 0;
                    for (std::size_t c = 0; c < 3; ++c)
                        for (std::size_t dy = 0; dy < 2; ++dy)
                            for (std::size_t dx = 0; dx < 2; ++dx)
                                g += v[((b * 3 + c) * kSide + 2 * y + dy) * kSide + 2 * x + dx];
                    const std::size_t ch = (y % 2) * 2 + x % 2;
                    out[((b * kLatentChannels + ch) * kLatentSide + y / 2) * kLatentSide + x / 2] = g / 12.0;
                }
        return Tensor::from({n, kLatentChannels, kLatentSide, kLatentSide}, std::move(out));
    }
    require_ready("encode");
    Tensor raw = raw_encode(pixels);
    std::vector<double> shift(kLatentChannels), inv(kLatentChannels);
    for (std::size_t c = 0; c < kLatentChannels; ++c) {
        shift[c] = -mean_[c];
        inv[c] = 1.0 / std_[c];
    }
    return mul(add(raw, Tensor::from({kLatentChannels, 1, 1}, shift)), Tensor::from({kLatentChannels, 1, 1}, inv));
}

Tensor LatentCodec::decode_batch(const Tensor& z) const {
    check_latents(z);
    const std::size_t n = z.dim(0);
    if (mode_ == LatentMode::identity_debug) {
        const auto v = z.data();
        std::vector<double> out(n * 3 * kSide * kSide);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t y = 0; y < kSide; ++y)
                for (std::size_t x = 0; x < kSide; ++x) {
                    const std::size_t gy = y / 2, gx = x / 2, ch = (gy % 2) * 2 + gx % 2;
                    const double g = v[((b * kLatentChannels + ch) * kLatentSide + gy / 2) * kLatentSide + gx / 2];
                    for (std::size_t c = 0; c < 3; ++c) out[((b * 3 + c) * kSide + y) * kSide + x] = g;
                }
        return Tensor::from({n, 3, kSide, kSide}, std::move(out));
    }
    require_ready("decode");
    return raw_decode(
        add(mul(z, Tensor::from({kLatentChannels, 1, 1}, std_)), Tensor::from({kLatentChannels, 1, 1}, mean_)));
}

Tensor LatentCodec::encode_frame(const Image& img) const {
    return reshape(encode_frames({img}), {kLatentChannels, kLatentSide, kLatentSide});
}

Tensor LatentCodec::encode_frames(const std::vector<Image>& frames) const {
    NoGradGuard guard;
    return encode_batch(images_to_batch(frames));
}

Image LatentCodec::decode_latent(const Tensor& z) const {
    return decode_latents(reshape(z, {1, kLatentChannels, kLatentSide, kLatentSide}))[0];
}

std::vector<Image> LatentCodec::decode_latents(const Tensor& z) const {
    NoGradGuard guard;
    const Tensor px = decode_batch(z);
    std::vector<Image> out;
    const std::size_t plane = 3 * kSide * kSide;
    for (std::size_t n = 0; n < z.dim(0); ++n) {
        const auto d = px.data().subspan(n * plane, plane);
        out.push_back(chw_to_image(Tensor::from({3, kSide, kSide}, {d.begin(), d.end()})));
    }
    return out;
}

void LatentCodec::finalize(const Tensor& pixels) {
    if (mode_ != LatentMode::codec) throw ContractError("finalize: identity-debug codec has no statistics");
    NoGradGuard guard;
    const Tensor raw = raw_encode(pixels);
    const std::size_t n = raw.dim(0);
    for (std::size_t c = 0; c < kLatentChannels; ++c) {
        double s = 0, ss = 0;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < kLatentTokens; ++i) {
                const double v = raw[(b * kLatentChannels + c) * kLatentTokens + i];
                s += v;
                ss += v * v;
            }
        const double cnt = static_cast<double>(n * kLatentTokens);
        mean_[c] = s / cnt;
        std_[c] = std::sqrt(std::max(ss / cnt - mean_[c] * mean_[c], 1e-8));
    }
    trained_ = true;
}

std::vector<NamedTensor> LatentCodec::to_records() const {
    auto out = h2m::to_records(params_, "codec.");
    out.push_back({"codec.mode", Tensor::scalar(mode_ == LatentMode::codec ? 0.0 : 1.0)});
    out.push_back({"codec.trained", Tensor::scalar(trained_ ? 1.0 : 0.0)});
    out.push_back({"codec.norm.mean", Tensor::from({kLatentChannels}, mean_)});
    out.push_back({"codec.norm.std", Tensor::from({kLatentChannels}, std_)});
    return out;
}

LatentCodec LatentCodec::from_records(const std::vector<NamedTensor>& records) {
    const auto* mode = find_record(records, "codec.mode");
    if (!mode) throw ValidationError("checkpoint has no codec");
    if (mode->tensor.item() != 0.0) return identity_debug();
    Rng rng(0);
    LatentCodec c = make(rng);
    assign_from_records(c.params_, records, "codec.");
    const auto* trained = find_record(records, "codec.trained");
    const auto* mean = find_record(records, "codec.norm.mean");
    const auto* sd = find_record(records, "codec.norm.std");
    if (!trained || !mean || !sd) throw ValidationError("codec checkpoint is missing normalization records");
    c.trained_ = trained->tensor.item() != 0.0;
    c.mean_.assign(mean->tensor.data().begin(), mean->tensor.data().end());
    c.std_.assign(sd->tensor.data().begin(), sd->tensor.data().end());
    return c;
}

Image grayscale_downsample(const Image& img) {
    if (img.width != kSide || img.height != kSide) throw DimensionError("grayscale_downsample expects 32x32");
    Image out(kSide, kSide);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
            double g = 0;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) g += img.at(2 * x + dx, 2 * y + dy)[c];
            g /= 12.0;
            for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) out.set(2 * x + dx, 2 * y + dy, {g, g, g});
        }
    return out;
}

std::vector<double> train_codec(LatentCodec& codec, const std::vector<Image>& frames, const CodecTrainConfig& cfg,
                                Rng& rng) {
    if (codec.mode() != LatentMode::codec) throw ContractError("train_codec: identity-debug codec has no parameters");
    if (frames.empty()) throw ContractError("train_codec: empty frame pool");
    AdamState adam;
    std::vector<double> log;
    auto& params = codec.params();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<Image> batch;
        for (std::size_t b = 0; b < cfg.batch; ++b) batch.push_back(frames[rng.below(frames.size())]);
        const Tensor x = images_to_batch(batch);
        Tensor loss = mse(codec.reconstruct_raw(x), x);
        params.zero_grad();
        loss.backward();
        const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
        adam_step(params, adam, cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
        log.push_back(loss.item());
    }
    std::vector<Image> stats;
    for (std::size_t i = 0; i < std::min<std::size_t>(frames.size(), 512); ++i)
        stats.push_back(frames[i * frames.size() / std::min<std::size_t>(frames.size(), 512)]);
    codec.finalize(images_to_batch(stats));
    return log;
}

}  // namespace h2m
