#include "h2m/enhancer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "h2m/attention.hpp"
#include "h2m/error.hpp"
#include "h2m/ops.hpp"
#include "h2m/optim.hpp"
#include "h2m/rng.hpp"

namespace h2m {

namespace {

void check_tokens(const Tensor& z, std::size_t width, const char* what) {
    if (z.rank() != 3 || z.dim(2) != width)
        throw ContractError(std::string(what) + ": expected [N, HW, " + std::to_string(width) + "], got " +
                            shape_str(z.shape()));
}

}  // namespace

TemporalBlock TemporalBlock::make(ParamSet& params, const std::string& name, std::size_t width, bool temporal,
                                  std::size_t mlp_ratio, Rng& rng) {
    TemporalBlock b;
    b.query = Linear::make(params, name + ".q", width, width, rng, false);
    b.key = Linear::make(params, name + ".k", width, width, rng, false);
    b.value = Linear::make(params, name + ".v", width, width, rng, false);
    if (temporal) {
        b.norm_temporal = LayerNormAffine::make(params, name + ".norm_temporal", width);
        b.t_query = Linear::make(params, name + ".tq", width, width, rng, false);
        b.t_key = Linear::make(params, name + ".tk", width, width, rng, false);
        b.t_value = Linear::make(params, name + ".tv", width, width, rng, false);
    }
    b.norm_mlp = LayerNormAffine::make(params, name + ".norm_mlp", width);
    b.mlp = Mlp::make(params, name + ".mlp", width, mlp_ratio * width, width, rng);
    return b;
}

Tensor spatial_self_attention(const TemporalBlock& block, const Tensor& z) {
    check_tokens(z, block.query.weight.dim(0), "spatial_self_attention");
    return add(scaled_dot_attention(block.query(z), block.key(z), block.value(z)).output, z);
}

Tensor reshape_to_temporal(const Tensor& x) { return permute(x, {1, 0, 2}); }
Tensor reshape_back(const Tensor& x) { return permute(x, {1, 0, 2}); }

Tensor temporal_alignment(const TemporalBlock& block, const Tensor& x) {
    if (!block.has_temporal()) throw ContractError("temporal_alignment: block was built without temporal layers");
    check_tokens(x, block.t_query->weight.dim(0), "temporal_alignment");
    const Tensor xt = reshape_to_temporal(x);
    const Tensor attended = scaled_dot_attention((*block.t_query)(xt), (*block.t_key)(xt), (*block.t_value)(xt)).output;
    return reshape_back(add(attended, xt));
}

Tensor TemporalBlock::operator()(const Tensor& z) const {
    Tensor x = spatial_self_attention(*this, z);
    if (has_temporal()) x = temporal_alignment(*this, norm_temporal(x));
    return add(x, mlp(norm_mlp(x)));
}

CodeEnhancer CodeEnhancer::make(const EnhancerConfig& cfg, std::size_t code_dim, std::size_t codebook_size,
                                Rng& rng) {
    if (cfg.width == 0 || cfg.blocks == 0 || code_dim == 0 || codebook_size == 0)
        throw ContractError("CodeEnhancer: sizes must be positive");
    CodeEnhancer e;
    e.cfg_ = cfg;
    e.code_dim_ = code_dim;
    e.codebook_size_ = codebook_size;
    auto& p = e.params_;
    e.in_proj = Linear::make(p, "in_proj", code_dim, cfg.width, rng);
    e.position = p.add("position", randn({kCodeTokens, cfg.width}, rng, 0.1));
    for (std::size_t k = 0; k < cfg.blocks; ++k)
        e.blocks_.push_back(TemporalBlock::make(p, "block" + std::to_string(k), cfg.width, cfg.temporal, cfg.mlp_ratio, rng));
    e.head = Linear::make(p, "head", cfg.width, codebook_size, rng);
    return e;
}

Tensor CodeEnhancer::predict_codes(const Tensor& features) const {
    const auto& s = features.shape();
    if (s.size() != 3 || s[1] != kCodeTokens || s[2] != code_dim_)
        throw DimensionError("predict_codes expects [N, 64, " + std::to_string(code_dim_) + "], got " +
                             shape_str(s));
    Tensor x = add(in_proj(features), position);
    for (const auto& b : blocks_) x = b(x);
    return head(x);
}

std::vector<NamedTensor> CodeEnhancer::to_records() const {
    auto out = h2m::to_records(params_, "enhancer.");
    out.push_back({"enhancer.config",
                   Tensor::from({6}, {double(cfg_.width), double(cfg_.blocks), cfg_.temporal ? 1.0 : 0.0,
                                      double(cfg_.mlp_ratio), double(code_dim_), double(codebook_size_)})});
    return out;
}

CodeEnhancer CodeEnhancer::from_records(const std::vector<NamedTensor>& records) {
    const auto* c = find_record(records, "enhancer.config");
    if (!c || c->tensor.numel() != 6) throw ValidationError("checkpoint has no enhancer configuration");
    const auto v = c->tensor.data();
    EnhancerConfig cfg{static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), v[2] != 0.0,
                       static_cast<std::size_t>(v[3])};
    Rng rng(0);
    CodeEnhancer e = make(cfg, static_cast<std::size_t>(v[4]), static_cast<std::size_t>(v[5]), rng);
    assign_from_records(e.params_, records, "enhancer.");
    return e;
}

Tensor lowres_features(const VqModel& vq, const std::vector<Image>& frames) {
    if (frames.empty()) throw ContractError("lowres_features: no frames");
    std::vector<Image> up;
    up.reserve(frames.size());
    for (const auto& f : frames) {
        if (f.width != kCanvas || f.height != kCanvas)
            throw DimensionError("enhancer input frames must be 32x32, got " + std::to_string(f.width) + "x" +
                                 std::to_string(f.height));
        up.push_back(upsample_bilinear(f, 2));
    }
    NoGradGuard guard;
    return vq.encode(images_to_batch(up));
}

std::vector<Image> enhance(const CodeEnhancer& enhancer, const VqModel& vq, const std::vector<Image>& frames) {
    NoGradGuard guard;
    const Tensor logits = enhancer.predict_codes(lowres_features(vq, frames));
    const std::size_t m = logits.dim(2);
    const auto lv = logits.data();
    std::vector<int> codes(logits.numel() / m);
    for (std::size_t r = 0; r < codes.size(); ++r) {
        const auto row = lv.subspan(r * m, m);
        codes[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    const Tensor hq = vq.decode_codes(codes, frames.size());
    std::vector<Image> out;
    out.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) out.push_back(chw_to_image(reshape(slice(hq, 0, i, i + 1), {3, kHqSide, kHqSide})));
    return out;
}

HqPair make_hq_pair(const BlobSequence& seq) { return {seq.frames, rerender(seq, 2)}; }

std::vector<Identity> enhancer_palette(std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Identity> out;
    while (out.size() < count) {
        Identity id = sample_identity(rng);
        if (!palette_separated(id)) continue;
        const bool distinct = std::all_of(out.begin(), out.end(), [&](const Identity& o) {
            return max_channel_distance(o.background_color, id.background_color) >= 0.2 &&
                   max_channel_distance(o.head_color, id.head_color) >= 0.2;
        });
        if (distinct) out.push_back(id);
    }
    return out;
}

BlobSequence palette_sequence(Rng rng, std::size_t length, const std::vector<Identity>& palette) {
    if (palette.empty()) throw ContractError("palette_sequence: empty palette");
    BlobSequence seq = generate_sequence(rng, length);
    seq.identity = palette[rng.split(9).below(palette.size())];
    seq.frames = rerender(seq, 1);
    return seq;
}

Image degrade(const Image& img, double sigma, Rng& rng) {
    Image out = img;
    if (sigma <= 0) return out;
    for (auto& v : out.pixels) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
    return out;
}

std::vector<double> train_enhancer(CodeEnhancer& enhancer, const VqModel& vq, const std::vector<HqPair>& pairs,
                                   const EnhancerTrainConfig& cfg, Rng& rng) {
    if (pairs.empty()) throw ContractError("train_enhancer: no training pairs");
    if (!vq.trained()) throw StateError("train_enhancer: the VQ model must be pretrained first");
    for (const auto& p : pairs)
        if (p.lowres.size() != p.highres.size() || p.lowres.size() < cfg.clip)
            throw ContractError("train_enhancer: every pair needs >= clip aligned frames");
    std::vector<std::vector<int>> targets;
    for (const auto& p : pairs) targets.push_back(vq.frame_codes(p.highres));

    auto& params = enhancer.params();
    AdamState adam;
    std::vector<double> log;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const std::size_t i = rng.below(pairs.size());
        const std::size_t t0 = rng.below(pairs[i].lowres.size() - cfg.clip + 1);
        std::vector<Image> clip;
        for (std::size_t f = 0; f < cfg.clip; ++f)
            clip.push_back(degrade(pairs[i].lowres[t0 + f], cfg.input_noise * rng.uniform(), rng));
        const std::span<const int> want(targets[i].data() + t0 * kCodeTokens, cfg.clip * kCodeTokens);
        const Tensor logits = enhancer.predict_codes(lowres_features(vq, clip));
        Tensor loss = cross_entropy(reshape(logits, {cfg.clip * kCodeTokens, logits.dim(2)}), want);
        params.zero_grad();
        loss.backward();
        clip_grad_norm(params, 1.0);
        const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
        adam_step(params, adam, cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
        log.push_back(loss.item());
    }
    return log;
}

double code_accuracy(const CodeEnhancer& enhancer, const VqModel& vq, const std::vector<HqPair>& pairs,
                     std::size_t clip) {
    NoGradGuard guard;
    std::size_t hit = 0, total = 0;
    for (const auto& p : pairs) {
        const auto want = vq.frame_codes(p.highres);
        for (std::size_t t0 = 0; t0 < p.lowres.size(); t0 += clip) {
            const std::size_t n = std::min(clip, p.lowres.size() - t0);
            std::vector<Image> frames(p.lowres.begin() + static_cast<long>(t0),
                                      p.lowres.begin() + static_cast<long>(t0 + n));
            const Tensor logits = enhancer.predict_codes(lowres_features(vq, frames));
            const std::size_t m = logits.dim(2);
            const auto lv = logits.data();
            for (std::size_t r = 0; r < n * kCodeTokens; ++r) {
                const auto row = lv.subspan(r * m, m);
                const auto arg = std::max_element(row.begin(), row.end()) - row.begin();
                hit += arg == want[t0 * kCodeTokens + r];
                ++total;
            }
        }
    }
    return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

}  // namespace h2m
