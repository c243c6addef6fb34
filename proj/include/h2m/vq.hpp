#pragma once

#include <cstddef>
#include <vector>

#include "h2m/checkpoint.hpp"
#include "h2m/image.hpp"
#include "h2m/nn.hpp"
#include "h2m/tensor.hpp"

namespace h2m {

class Rng;

inline constexpr std::size_t kHqSide = 64;
inline constexpr std::size_t kCodeGrid = 8;  // 64x64 frames -> 8x8 code tokens
inline constexpr std::size_t kCodeTokens = kCodeGrid * kCodeGrid;

struct Quantized {
    std::vector<int> codes;  // one per row of the input
    Tensor zq;               // selected entries, same shape as the input
};

// Nearest codebook entry per trailing-axis vector of z [..., d]; ties go
// to the lowest index. zq is differentiable w.r.t. the codebook only.
Quantized vq_quantize(const Tensor& z, const Tensor& book);

// VQ autoencoder on 64x64 frames: encoder to [N, 64, d] tokens, learned codebook
// [M, d], decoder from quantized tokens.
class VqModel {
   public:
    static VqModel make(Rng& rng, std::size_t codes = 64, std::size_t dim = 8);

    std::size_t codebook_size() const { return codebook().dim(0); }
    std::size_t code_dim() const { return codebook().dim(1); }
    Tensor codebook() const { return params_.get("codebook"); }
    bool trained() const { return trained_; }
    void mark_trained() { trained_ = true; }

    // [N, 3, 64, 64] -> continuous tokens [N, 64, d]
    Tensor encode(const Tensor& pixels) const;
    // tokens [N, 64, d] -> [N, 3, 64, 64]
    Tensor decode(const Tensor& tokens) const;
    Tensor decode_codes(const std::vector<int>& codes, std::size_t frames) const;

    std::vector<int> frame_codes(const std::vector<Image>& hq_frames) const;
    std::vector<Image> reconstruct(const std::vector<Image>& hq_frames) const;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    std::vector<NamedTensor> to_records() const;
    static VqModel from_records(const std::vector<NamedTensor>& records);

   private:
    ParamSet params_;
    bool trained_ = false;
};

struct VqTrainConfig {
    std::size_t steps = 1500;
    std::size_t batch = 8;
    double lr = 2e-3;
    double commitment = 0.25;
    std::size_t revive_every = 100;  // re-seed unused entries from live encoder outputs
};

// Straight-through training: reconstruction + codebook + commitment terms.
std::vector<double> train_vq(VqModel& model, const std::vector<Image>& hq_frames, const VqTrainConfig& cfg,
                             Rng& rng);

}  // namespace h2m
