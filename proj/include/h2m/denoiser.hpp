#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "h2m/attention.hpp"
#include "h2m/checkpoint.hpp"
#include "h2m/conditioning.hpp"
#include "h2m/diffusion.hpp"
#include "h2m/nn.hpp"

namespace h2m {

class Rng;

struct DenoiserConfig {
    std::size_t width = 16;
    std::size_t stages = 3;
    std::size_t time_dim = 32;
    std::size_t max_frames = 64;
    std::size_t window = 4;
    std::size_t audio_half_window = kAudioHalfWindow;
    std::size_t audio_width = kAudioWidth;
    std::size_t text_width = kTextWidth;
    std::size_t mlp_ratio = 2;
    // Variance v of (z0 - reference latent). When positive the output is the
    // posterior-mean eps under z0 ~ N(reference, v I) plus a learned residual
    // scaled to the posterior sd, so the net must be used with the schedule below.
    double prior_variance = 0.0;
    std::size_t schedule_steps = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;

    bool operator==(const DenoiserConfig&) const = default;
};

// Token-grid denoiser over [B, L, 8, 8, 8] latents. Each stage runs, with a
// pre-norm residual around every sublayer: spatial self-attention within a
// frame, temporal attention across frames at each position, reference
// cross-attention, motion cross-attention (each position attends to the N
// window latents at that position), AdaLN text modulation, audio
// cross-attention over a null token and the frame's neighbouring audio windows,
// then an MLP.
class DenoiserNet {
   public:
    static DenoiserNet make(const DenoiserConfig& cfg, Rng& rng);

    const DenoiserConfig& config() const { return cfg_; }
    bool preconditioned() const { return cfg_.prior_variance > 0.0; }
    // Throws ContractError when a preconditioned net meets a different schedule.
    void check_schedule(const NoiseSchedule& sched) const;
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // zt [B, L, 8, 8, 8], one step per batch element -> eps_hat of the same shape.
    Tensor forward(const Tensor& zt, std::span<const std::size_t> t, const ConditioningBatch& cond,
                   AttentionRecorder* recorder = nullptr) const;

    std::vector<NamedTensor> to_records() const;
    static DenoiserNet from_records(const std::vector<NamedTensor>& records);

   private:
    struct Stage {
        LayerNormAffine norm_self, norm_temporal, norm_reference, norm_motion, norm_audio, norm_mlp;
        CrossAttentionLayer self_attn, temporal_attn, reference_attn, motion_attn, audio_attn;
        Linear out_self, out_temporal, out_reference, out_motion, out_audio;
        TextAdapter text;
        Mlp mlp;
    };

    DenoiserConfig cfg_;
    NoiseSchedule schedule_;  // only for preconditioned nets
    ParamSet params_;
    Linear in_proj, reference_proj, motion_proj;
    Tensor spatial_pos, frame_pos, window_pos;
    Mlp time_mlp;
    AudioEmbedder audio;
    Tensor audio_null;  // [1, audio_width]
    std::vector<Stage> stages_;
    LayerNormAffine norm_out;
    Linear out_proj;
};

// Single-segment convenience: zt [L, 8, 8, 8] under one conditioning set.
Tensor predict_eps(const DenoiserNet& net, const Tensor& zt, std::size_t t, const ConditioningSet& cond,
                   AttentionRecorder* recorder = nullptr);

}  // namespace h2m
