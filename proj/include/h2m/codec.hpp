#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "h2m/checkpoint.hpp"
#include "h2m/image.hpp"
#include "h2m/nn.hpp"

namespace h2m {

class Rng;

inline constexpr std::size_t kLatentChannels = 8;
inline constexpr std::size_t kLatentSide = 8;
inline constexpr std::size_t kLatentTokens = kLatentSide * kLatentSide;

enum class LatentMode { codec, identity_debug };

std::string latent_mode_name(LatentMode m);
LatentMode parse_latent_mode(const std::string& name);

// 32x32 RGB <-> [8, 8, 8] latent. In codec mode a small conv autoencoder with
// per-channel latent standardization; in identity-debug mode a lossless
// rearrangement of the 16x16 grayscale downsample (four channels used, four zero).
class LatentCodec {
   public:
    static LatentCodec make(Rng& rng);
    static LatentCodec identity_debug();

    LatentMode mode() const { return mode_; }
    bool trained() const { return trained_; }
    bool ready() const { return mode_ == LatentMode::identity_debug || trained_; }

    // Standardized latents of [N, 3, 32, 32] batches -> [N, 8, 8, 8] and back.
    // Differentiable in codec mode (used by training).
    Tensor encode_batch(const Tensor& pixels) const;
    Tensor decode_batch(const Tensor& latents) const;

    // Autoencoder pass without the standardization; what codec training fits.
    Tensor reconstruct_raw(const Tensor& pixels) const;

    Tensor encode_frame(const Image& img) const;                  // [8, 8, 8]
    Tensor encode_frames(const std::vector<Image>& frames) const;  // [N, 8, 8, 8]
    Image decode_latent(const Tensor& z) const;                    // clamps to [0, 1]
    std::vector<Image> decode_latents(const Tensor& z) const;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // Fits the standardization to the raw latents of `pixels` and marks the codec trained.
    void finalize(const Tensor& pixels);

    std::vector<NamedTensor> to_records() const;
    static LatentCodec from_records(const std::vector<NamedTensor>& records);

   private:
    Tensor raw_encode(const Tensor& pixels) const;
    Tensor raw_decode(const Tensor& latents) const;
    void require_ready(const char* what) const;

    LatentMode mode_ = LatentMode::codec;
    bool trained_ = false;
    ParamSet params_;
    std::vector<double> mean_ = std::vector<double>(kLatentChannels, 0.0);
    std::vector<double> std_ = std::vector<double>(kLatentChannels, 1.0);
};

// 16x16 grayscale (channel mean, 2x2 box) image shown at 32x32 by pixel replication.
Image grayscale_downsample(const Image& img);

struct CodecTrainConfig {
    std::size_t steps = 6000;
    std::size_t batch = 16;
    double lr = 3e-3;
};

// Reconstruction training on a frame pool; returns per-step MSE.
std::vector<double> train_codec(LatentCodec& codec, const std::vector<Image>& frames, const CodecTrainConfig& cfg,
                                Rng& rng);

}  // namespace h2m
