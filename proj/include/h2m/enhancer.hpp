#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "h2m/blob.hpp"
#include "h2m/checkpoint.hpp"
#include "h2m/nn.hpp"
#include "h2m/vq.hpp"

namespace h2m {

class Rng;

// One transformer block: spatial self-attention within each frame, then
// temporal alignment across frames at each spatial position, then a pointwise
// MLP. Blocks built without temporal alignment carry no temporal weights.
struct TemporalBlock {
    Linear query, key, value;                    // spatial
    std::optional<Linear> t_query, t_key, t_value;  // temporal
    LayerNormAffine norm_temporal, norm_mlp;
    Mlp mlp;

    static TemporalBlock make(ParamSet& params, const std::string& name, std::size_t width, bool temporal,
                              std::size_t mlp_ratio, Rng& rng);
    bool has_temporal() const { return t_query.has_value(); }
    // [N, HW, C] -> [N, HW, C]
    Tensor operator()(const Tensor& z) const;
};

// softmax(Q K^T / sqrt(C)) V + z per frame; z is [N, HW, C].
Tensor spatial_self_attention(const TemporalBlock& block, const Tensor& z);
// [N, HW, C] -> [HW, N, C], attention over frames, residual, and back.
Tensor temporal_alignment(const TemporalBlock& block, const Tensor& x);
Tensor reshape_to_temporal(const Tensor& x);
Tensor reshape_back(const Tensor& x);

struct EnhancerConfig {
    std::size_t width = 32;
    std::size_t blocks = 4;
    bool temporal = true;
    std::size_t mlp_ratio = 2;
};

// Code-sequence predictor over frozen-encoder features of upsampled frames.
class CodeEnhancer {
   public:
    static CodeEnhancer make(const EnhancerConfig& cfg, std::size_t code_dim, std::size_t codebook_size, Rng& rng);

    const EnhancerConfig& config() const { return cfg_; }
    // features [N, 64, d] -> logits [N, 64, M]
    Tensor predict_codes(const Tensor& features) const;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    std::vector<NamedTensor> to_records() const;
    static CodeEnhancer from_records(const std::vector<NamedTensor>& records);

   private:
    EnhancerConfig cfg_;
    std::size_t code_dim_ = 0;
    std::size_t codebook_size_ = 0;
    ParamSet params_;
    Linear in_proj, head;
    Tensor position;
    std::vector<TemporalBlock> blocks_;
};

// Decoded 32x32 frames -> bilinear x2 -> frozen VQ encoder tokens [N, 64, d].
Tensor lowres_features(const VqModel& vq, const std::vector<Image>& frames);

// argmax codes -> codebook entries -> HQ decoder, one 64x64 frame per input.
std::vector<Image> enhance(const CodeEnhancer& enhancer, const VqModel& vq, const std::vector<Image>& frames);

// Aligned low/high resolution renders of one sequence.
struct HqPair {
    std::vector<Image> lowres;   // 32x32
    std::vector<Image> highres;  // 64x64
};
HqPair make_hq_pair(const BlobSequence& seq);

// Small fixed set of well-separated identities; discrete codes cover a closed
// palette, so the enhancer corpus is drawn from it.
std::vector<Identity> enhancer_palette(std::size_t count = 4, std::uint64_t seed = 4242);
// Sequence from `rng` re-rendered with a palette identity.
BlobSequence palette_sequence(Rng rng, std::size_t length, const std::vector<Identity>& palette);

struct EnhancerTrainConfig {
    std::size_t steps = 1200;
    std::size_t clip = 8;           // frames per training clip
    double lr = 2e-3;
    double input_noise = 0.04;      // per-pixel std of the lowres degradation, drawn per frame
};

// Cross-entropy against the VQ codes of the highres frames. Only enhancer
// parameters move; `vq` is read-only.
std::vector<double> train_enhancer(CodeEnhancer& enhancer, const VqModel& vq, const std::vector<HqPair>& pairs,
                                   const EnhancerTrainConfig& cfg, Rng& rng);

// Adds N(0, sigma^2) to every channel, clamped to [0, 1].
Image degrade(const Image& img, double sigma, Rng& rng);

// Top-1 agreement between predicted and ground-truth codes.
double code_accuracy(const CodeEnhancer& enhancer, const VqModel& vq, const std::vector<HqPair>& pairs,
                     std::size_t clip = 8);

}  // namespace h2m
