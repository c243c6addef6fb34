#include "h2m/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "h2m/codec.hpp"
#include "h2m/error.hpp"
#include "h2m/ops.hpp"
#include "h2m/rng.hpp"

namespace h2m {

namespace {

// [B, ..., C, H, W] -> [B, ..., H*W, C]
Tensor to_tokens(const Tensor& z) {
    const auto& s = z.shape();
    const std::size_t r = s.size();
    std::vector<std::size_t> axes(r);
    for (std::size_t i = 0; i + 3 < r; ++i) axes[i] = i;
    axes[r - 3] = r - 2;
    axes[r - 2] = r - 1;
    axes[r - 1] = r - 3;
    Shape out(s.begin(), s.end() - 3);
    out.push_back(s[r - 2] * s[r - 1]);
    out.push_back(s[r - 3]);
    return reshape(permute(z, axes), out);
}

// [B, L, S, d] <-> [B*S, L, d]
Tensor frames_to_positions(const Tensor& x) {
    const auto b = x.dim(0), l = x.dim(1), s = x.dim(2), d = x.dim(3);
    return reshape(permute(x, {0, 2, 1, 3}), {b * s, l, d});
}

Tensor positions_to_frames(const Tensor& x, std::size_t b, std::size_t l) {
    const auto s = x.dim(0) / b, d = x.dim(2);
    return permute(reshape(x, {b, s, l, d}), {0, 2, 1, 3});
}

constexpr std::size_t kConfigValues = 13;
constexpr std::size_t kAudioContext = 4;  // null + three windows

std::vector<double> config_values(const DenoiserConfig& c) {
    return {double(c.width),       double(c.stages),     double(c.time_dim),         double(c.max_frames),
            double(c.window),      double(c.audio_half_window), double(c.audio_width), double(c.text_width),
            double(c.mlp_ratio),   c.prior_variance,     double(c.schedule_steps),  c.beta_start,
            c.beta_end};
}

}  // namespace

DenoiserNet DenoiserNet::make(const DenoiserConfig& cfg, Rng& rng) {
    if (cfg.width < 2 || cfg.stages == 0 || cfg.window == 0 || cfg.max_frames == 0)
        throw ContractError("DenoiserNet: width >= 2, stages >= 1, window >= 1 required");
    if (cfg.prior_variance < 0.0) throw ContractError("DenoiserNet: prior_variance must be >= 0");
    DenoiserNet n;
    n.cfg_ = cfg;
    if (cfg.prior_variance > 0.0) n.schedule_ = make_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end);
    auto& p = n.params_;
    const std::size_t d = cfg.width;
    n.in_proj = Linear::make(p, "in_proj", kLatentChannels, d, rng);
    n.reference_proj = Linear::make(p, "reference_proj", kLatentChannels, d, rng);
    n.motion_proj = Linear::make(p, "motion_proj", kLatentChannels, d, rng);
    n.spatial_pos = p.add("spatial_pos", randn({kLatentTokens, d}, rng, 0.5));
    n.frame_pos = p.add("frame_pos", randn({cfg.max_frames, 1, d}, rng, 0.5));
    n.window_pos = p.add("window_pos", randn({cfg.window, 1, d}, rng, 0.5));
    n.time_mlp = Mlp::make(p, "time_mlp", cfg.time_dim, d, d, rng);
    n.audio = AudioEmbedder::make(p, "audio_embed", cfg.audio_half_window, cfg.audio_width, rng);
    n.audio_null = p.add("audio_null", randn({1, cfg.audio_width}, rng, 0.5));
    for (std::size_t k = 0; k < cfg.stages; ++k) {
        const std::string s = "stage" + std::to_string(k) + ".";
        Stage st;
        st.norm_self = LayerNormAffine::make(p, s + "norm_self", d);
        st.self_attn = CrossAttentionLayer::make(p, s + "self", d, d, d, rng);
        st.out_self = Linear::make(p, s + "out_self", d, d, rng);
        st.norm_temporal = LayerNormAffine::make(p, s + "norm_temporal", d);
        st.temporal_attn = CrossAttentionLayer::make(p, s + "temporal", d, d, d, rng);
        st.out_temporal = Linear::make(p, s + "out_temporal", d, d, rng);
        st.norm_reference = LayerNormAffine::make(p, s + "norm_reference", d);
        st.reference_attn = CrossAttentionLayer::make(p, s + "reference", d, d, d, rng);
        st.out_reference = Linear::make(p, s + "out_reference", d, d, rng);
        st.norm_motion = LayerNormAffine::make(p, s + "norm_motion", d);
        st.motion_attn = CrossAttentionLayer::make(p, s + "motion", d, d, d, rng);
        st.out_motion = Linear::make(p, s + "out_motion", d, d, rng);
        st.text = TextAdapter::make(p, s + "text", cfg.text_width, d, rng);
        st.norm_audio = LayerNormAffine::make(p, s + "norm_audio", d);
        st.audio_attn = CrossAttentionLayer::make(p, s + "audio", d, cfg.audio_width, d, rng);
        st.out_audio = Linear::make(p, s + "out_audio", d, d, rng);
        st.norm_mlp = LayerNormAffine::make(p, s + "norm_mlp", d);
        st.mlp = Mlp::make(p, s + "mlp", d, cfg.mlp_ratio * d, d, rng);
        n.stages_.push_back(std::move(st));
    }
    n.norm_out = LayerNormAffine::make(p, "norm_out", d);
    n.out_proj = Linear::make(p, "out_proj", d, kLatentChannels, rng, true, 0.0);
    return n;
}

Tensor DenoiserNet::forward(const Tensor& zt, std::span<const std::size_t> t, const ConditioningBatch& cond,
                            AttentionRecorder* recorder) const {
    const auto& zs = zt.shape();
    if (zs.size() != 5 || zs[2] != kLatentChannels || zs[3] != kLatentSide || zs[4] != kLatentSide)
        throw DimensionError("denoiser expects zt [B, L, 8, 8, 8], got " + shape_str(zs));
    const std::size_t B = zs[0], L = zs[1], S = kLatentTokens, N = cfg_.window, d = cfg_.width;
    if (t.size() != B) throw ContractError("denoiser: one diffusion step per batch element required");
    if (L > cfg_.max_frames) throw ContractError("denoiser: segment longer than max_frames");
    if (cond.batch != B || cond.frames != L)
        throw ContractError("denoiser: conditioning batch " + std::to_string(cond.batch) + "x" +
                            std::to_string(cond.frames) + " does not match latents " + shape_str(zs));
    if (cond.window != N)
        throw ContractError("denoiser: conditioning carries " + std::to_string(cond.window) +
                            " motion latents, network expects " + std::to_string(N));
    if (cond.audio.dim(2) != 2 * cfg_.audio_half_window + 1)
        throw ContractError("denoiser: audio window width mismatch");

    // Input tokens with spatial, frame and time embeddings.
    std::vector<double> steps(t.begin(), t.end());
    const Tensor temb = reshape(time_mlp(sinusoidal_embedding(steps, cfg_.time_dim)), {B, 1, 1, d});
    Tensor x = in_proj(to_tokens(zt));  // [B, L, S, d]
    x = add(add(add(x, spatial_pos), slice(frame_pos, 0, 0, L)), temb);

    const Tensor ref = add(reference_proj(to_tokens(cond.reference)), spatial_pos);  // [B, S, d]
    Tensor mot = add(add(motion_proj(to_tokens(cond.motion)), spatial_pos), window_pos);  // [B, N, S, d]
    mot = frames_to_positions(mot);  // [B*S, N, d]

    // Audio context: a learned null token, then embeddings of frames f-1, f, f+1
    // (edge-clamped). Three near-identical windows cannot be told apart by a query;
    // the null token lets positions away from the mouth attend elsewhere.
    const Tensor aemb = concat({reshape(audio(cond.audio), {B * L, cfg_.audio_width}), audio_null}, 0);
    const int null_row = static_cast<int>(B * L);
    std::vector<int> nb;
    nb.reserve(B * L * kAudioContext);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t f = 0; f < L; ++f) {
            nb.push_back(null_row);
            for (int k = -1; k <= 1; ++k) {
                const long g = std::clamp(static_cast<long>(f) + k, 0L, static_cast<long>(L) - 1);
                nb.push_back(static_cast<int>(b * L + static_cast<std::size_t>(g)));
            }
        }
    const Tensor actx = reshape(embedding(aemb, nb), {B * L, kAudioContext, cfg_.audio_width});

    const Shape grid{B, L, S, d};
    for (std::size_t k = 0; k < stages_.size(); ++k) {
        const Stage& st = stages_[k];
        const std::string tag = "stage" + std::to_string(k) + ".";

        Tensor h = reshape(st.norm_self(x), {B * L, S, d});
        auto a = st.self_attn.attend(h, h);
        record_attention(recorder, tag + "self", a.weights);
        x = add(x, reshape(st.out_self(a.output), grid));

        h = frames_to_positions(st.norm_temporal(x));
        a = st.temporal_attn.attend(h, h);
        record_attention(recorder, tag + "temporal", a.weights);
        x = add(x, positions_to_frames(st.out_temporal(a.output), B, L));

        h = reshape(st.norm_reference(x), {B, L * S, d});
        a = st.reference_attn.attend(h, ref);
        record_attention(recorder, tag + "reference", a.weights);
        x = add(x, reshape(st.out_reference(a.output), grid));

        h = frames_to_positions(st.norm_motion(x));
        a = st.motion_attn.attend(h, mot);
        record_attention(recorder, tag + "motion", a.weights);
        x = add(x, positions_to_frames(st.out_motion(a.output), B, L));

        x = reshape(adaln_apply(st.text, cond.labels, reshape(x, {B * L, S, d})), grid);

        h = reshape(st.norm_audio(x), {B * L, S, d});
        a = st.audio_attn.attend(h, actx);
        record_attention(recorder, tag + "audio", a.weights);
        x = add(x, reshape(st.out_audio(a.output), grid));

        x = add(x, st.mlp(st.norm_mlp(x)));
    }
    const Tensor out = out_proj(norm_out(x));  // [B, L, S, C]
    const Tensor residual = permute(reshape(out, {B, L, kLatentSide, kLatentSide, kLatentChannels}), {0, 1, 4, 2, 3});
    if (!preconditioned()) return residual;

    // zt = a z0 + s eps with z0 ~ N(ref, v): E[eps | zt] = s (zt - a ref) / (a^2 v + s^2),
    // and the posterior sd of eps is sqrt(a^2 v / (a^2 v + s^2)).
    const double v = cfg_.prior_variance;
    std::vector<double> k_z(B), k_ref(B), k_res(B);
    for (std::size_t b = 0; b < B; ++b) {
        schedule_.check_step(t[b]);
        const double ab = schedule_.alpha_bar_at(t[b]);
        const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab), den = ab * v + (1.0 - ab);
        k_z[b] = s / den;
        k_ref[b] = -s * a / den;
        k_res[b] = std::sqrt(ab * v / den);
    }
    const Shape per_b{B, 1, 1, 1, 1};
    const Tensor ref_lat = reshape(cond.reference, {B, 1, kLatentChannels, kLatentSide, kLatentSide});
    return add(add(mul(zt, Tensor::from(per_b, k_z)), mul(ref_lat, Tensor::from(per_b, k_ref))),
               mul(residual, Tensor::from(per_b, k_res)));
}

void DenoiserNet::check_schedule(const NoiseSchedule& sched) const {
    if (!preconditioned()) return;
    if (sched.steps != cfg_.schedule_steps || sched.beta_start != cfg_.beta_start || sched.beta_end != cfg_.beta_end)
        throw ContractError("denoiser was built for a " + std::to_string(cfg_.schedule_steps) +
                            "-step schedule and cannot run on a " + std::to_string(sched.steps) + "-step one");
}

std::vector<NamedTensor> DenoiserNet::to_records() const {
    auto out = h2m::to_records(params_, "denoiser.");
    out.push_back({"denoiser.config", Tensor::from({kConfigValues}, config_values(cfg_))});
    return out;
}

DenoiserNet DenoiserNet::from_records(const std::vector<NamedTensor>& records) {
    const auto* c = find_record(records, "denoiser.config");
    if (!c || c->tensor.numel() != kConfigValues) throw ValidationError("checkpoint has no denoiser configuration");
    const auto v = c->tensor.data();
    auto at = [&](std::size_t i) { return static_cast<std::size_t>(v[i]); };
    DenoiserConfig cfg{at(0), at(1), at(2), at(3), at(4), at(5), at(6), at(7), at(8), v[9], at(10), v[11], v[12]};
    Rng rng(0);
    DenoiserNet net = make(cfg, rng);
    assign_from_records(net.params_, records, "denoiser.");
    return net;
}

Tensor predict_eps(const DenoiserNet& net, const Tensor& zt, std::size_t t, const ConditioningSet& cond,
                   AttentionRecorder* recorder) {
    if (zt.rank() != 4) throw DimensionError("predict_eps expects zt [L, 8, 8, 8], got " + shape_str(zt.shape()));
    const std::size_t L = zt.dim(0);
    validate_conditioning(cond, L, net.config().window);
    const auto batch = stack_conditioning({cond}, net.config().window);
    Shape lifted = zt.shape();
    lifted.insert(lifted.begin(), 1);
    const std::size_t steps[] = {t};
    return reshape(net.forward(reshape(zt, lifted), steps, batch, recorder), zt.shape());
}

}  // namespace h2m
