#include "h2m/conditioning.hpp"

#include <algorithm>

#include "h2m/codec.hpp"
#include "h2m/error.hpp"
#include "h2m/ops.hpp"

namespace h2m {

std::vector<double> audio_window(std::span<const double> samples, std::size_t t, std::size_t half_window) {
    if (samples.empty()) throw ContractError("audio_window: empty signal");
    std::vector<double> w;
    w.reserve(2 * half_window + 1);
    const long last = static_cast<long>(samples.size()) - 1;
    for (long k = -static_cast<long>(half_window); k <= static_cast<long>(half_window); ++k)
        w.push_back(samples[static_cast<std::size_t>(std::clamp(static_cast<long>(t) + k, 0L, last))]);
    return w;
}

Tensor audio_windows(std::span<const double> samples, std::size_t t0, std::size_t count, std::size_t half_window) {
    std::vector<double> out;
    out.reserve(count * (2 * half_window + 1));
    for (std::size_t i = 0; i < count; ++i) {
        const auto w = audio_window(samples, t0 + i, half_window);
        out.insert(out.end(), w.begin(), w.end());
    }
    return Tensor::from({count, 2 * half_window + 1}, std::move(out));
}

AudioEmbedder AudioEmbedder::make(ParamSet& params, const std::string& name, std::size_t half_window,
                                  std::size_t width, Rng& rng) {
    return {Linear::make(params, name, 2 * half_window + 1, width, rng), half_window};
}

Tensor embed_audio_window(const AudioEmbedder& emb, const DrivingSignal& signal, std::size_t t) {
    return reshape(emb(audio_windows(signal.samples, t, 1, emb.half_window)), {emb.map.weight.dim(1)});
}

TextAdapter TextAdapter::make(ParamSet& params, const std::string& name, std::size_t text_width,
                              std::size_t feature_width, Rng& rng) {
    TextAdapter a;
    a.table = params.add(name + ".table", randn({static_cast<std::size_t>(kExpressionCount), text_width}, rng));
    a.mlp = Mlp::make(params, name + ".mlp", text_width, 2 * feature_width, 2 * feature_width, rng, true);
    a.feature_width = feature_width;
    return a;
}

std::pair<Tensor, Tensor> TextAdapter::modulation(std::span<const Expression> labels) const {
    std::vector<int> idx;
    idx.reserve(labels.size());
    for (auto l : labels) idx.push_back(static_cast<int>(l));
    const Tensor gb = mlp(embedding(table, idx));
    return {slice(gb, 1, 0, feature_width), slice(gb, 1, feature_width, 2 * feature_width)};
}

Tensor adaln_apply(const TextAdapter& adapter, std::span<const Expression> labels, const Tensor& x) {
    const std::size_t d = adapter.feature_width;
    if (x.rank() < 2 || x.dim(x.rank() - 1) != d || x.dim(0) != labels.size())
        throw DimensionError("adaln_apply: features " + shape_str(x.shape()) + " for " +
                             std::to_string(labels.size()) + " labels of width " + std::to_string(d));
    auto [gamma, beta] = adapter.modulation(labels);
    Shape bshape(x.rank(), 1);
    bshape[0] = labels.size();
    bshape.back() = d;
    gamma = reshape(gamma, bshape);
    beta = reshape(beta, bshape);
    return add(add(mul(gamma, layer_norm(x, Tensor(), Tensor())), beta), x);
}

Tensor adaln_apply(const TextAdapter& adapter, Expression label, const Tensor& x) {
    Shape lifted = x.shape();
    lifted.insert(lifted.begin(), 1);
    const Expression one[] = {label};
    return reshape(adaln_apply(adapter, one, reshape(x, lifted)), x.shape());
}

namespace {

const Shape kLatentShape{kLatentChannels, kLatentSide, kLatentSide};

void append(std::vector<double>& out, const Tensor& t) { out.insert(out.end(), t.data().begin(), t.data().end()); }

}  // namespace

void validate_conditioning(const ConditioningSet& cond, std::size_t frames, std::size_t window) {
    if (!cond.reference.defined()) throw ContractError("conditioning is missing the reference latent");
    if (cond.reference.shape() != kLatentShape)
        throw ContractError("conditioning reference latent has shape " + shape_str(cond.reference.shape()));
    if (cond.motion.size() != window)
        throw ContractError("conditioning has " + std::to_string(cond.motion.size()) + " motion latents, expected " +
                            std::to_string(window));
    for (const auto& m : cond.motion)
        if (!m.defined() || m.shape() != kLatentShape) throw ContractError("conditioning has a malformed motion latent");
    if (!cond.audio.defined()) throw ContractError("conditioning is missing the audio windows");
    if (cond.audio.rank() != 2 || cond.audio.dim(0) != frames)
        throw ContractError("conditioning audio " + shape_str(cond.audio.shape()) + " does not cover " +
                            std::to_string(frames) + " frames");
    if (cond.labels.size() != frames)
        throw ContractError("conditioning is missing text labels (" + std::to_string(cond.labels.size()) + " of " +
                            std::to_string(frames) + ")");
}

ConditioningBatch stack_conditioning(const std::vector<ConditioningSet>& sets, std::size_t window) {
    if (sets.empty()) throw ContractError("stack_conditioning: no sets");
    const std::size_t frames = sets[0].labels.size();
    ConditioningBatch b;
    b.batch = sets.size();
    b.frames = frames;
    b.window = window;
    std::vector<double> ref, mot, aud;
    for (const auto& s : sets) {
        validate_conditioning(s, frames, window);
        append(ref, s.reference);
        for (const auto& m : s.motion) append(mot, m);
        append(aud, s.audio);
        b.labels.insert(b.labels.end(), s.labels.begin(), s.labels.end());
    }
    const std::size_t aw = sets[0].audio.dim(1);
    b.reference = Tensor::from({b.batch, kLatentChannels, kLatentSide, kLatentSide}, std::move(ref));
    b.motion = Tensor::from({b.batch, window, kLatentChannels, kLatentSide, kLatentSide}, std::move(mot));
    b.audio = Tensor::from({b.batch, frames, aw}, std::move(aud));
    return b;
}

}  // namespace h2m
