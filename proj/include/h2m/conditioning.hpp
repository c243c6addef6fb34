#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "h2m/blob.hpp"
#include "h2m/nn.hpp"

namespace h2m {

class Rng;

inline constexpr std::size_t kAudioHalfWindow = 2;
inline constexpr std::size_t kAudioWidth = 16;
inline constexpr std::size_t kTextWidth = 16;

// The (2w+1) samples centred on frame t, edge-replicated at both ends.
std::vector<double> audio_window(std::span<const double> samples, std::size_t t, std::size_t half_window);
// Rows t0 .. t0+count-1 of windows -> [count, 2w+1].
Tensor audio_windows(std::span<const double> samples, std::size_t t0, std::size_t count, std::size_t half_window);

// Learned linear map of a sample window.
struct AudioEmbedder {
    Linear map;
    std::size_t half_window = kAudioHalfWindow;

    static AudioEmbedder make(ParamSet& params, const std::string& name, std::size_t half_window, std::size_t width,
                              Rng& rng);
    Tensor operator()(const Tensor& windows) const { return map(windows); }
};

Tensor embed_audio_window(const AudioEmbedder& emb, const DrivingSignal& signal, std::size_t t);

// Label embedding followed by an MLP whose last layer starts at zero, so
// (gamma, beta) = (0, 0) for every label until training moves it.
struct TextAdapter {
    Tensor table;  // [3, text width]
    Mlp mlp;       // text width -> 2 * feature width
    std::size_t feature_width = 0;

    static TextAdapter make(ParamSet& params, const std::string& name, std::size_t text_width,
                            std::size_t feature_width, Rng& rng);
    // gamma, beta: [labels.size(), feature width]
    std::pair<Tensor, Tensor> modulation(std::span<const Expression> labels) const;
};

// gamma * LayerNorm(x) + beta + x. x is [G, ..., d] with one label per leading
// slice, or [..., d] with a single label.
Tensor adaln_apply(const TextAdapter& adapter, std::span<const Expression> labels, const Tensor& x);
Tensor adaln_apply(const TextAdapter& adapter, Expression label, const Tensor& x);

// Everything the denoiser sees for one segment besides the noisy latent.
struct ConditioningSet {
    Tensor reference;                // [8, 8, 8]; never augmented
    std::vector<Tensor> motion;      // N latents [8, 8, 8], oldest first
    Tensor audio;                    // [L, 2w+1] sample windows, one per generated frame
    std::vector<Expression> labels;  // one per generated frame
};

// A stack of B conditioning sets with equal L and N.
struct ConditioningBatch {
    Tensor reference;                // [B, 8, 8, 8]
    Tensor motion;                   // [B, N, 8, 8, 8]
    Tensor audio;                    // [B, L, 2w+1]
    std::vector<Expression> labels;  // B * L
    std::size_t batch = 0;
    std::size_t frames = 0;
    std::size_t window = 0;
};

// Throws ContractError naming the first missing or inconsistent component.
void validate_conditioning(const ConditioningSet& cond, std::size_t frames, std::size_t window);
ConditioningBatch stack_conditioning(const std::vector<ConditioningSet>& sets, std::size_t window);

}  // namespace h2m
