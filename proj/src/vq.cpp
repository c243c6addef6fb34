#include "h2m/vq.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "h2m/error.hpp"
#include "h2m/ops.hpp"
#include "h2m/optim.hpp"
#include "h2m/rng.hpp"

namespace h2m {

namespace {

constexpr std::size_t kWidth = 32;

void add_conv(ParamSet& p, const std::string& name, Shape shape, std::size_t fan_in, std::size_t bias, Rng& rng) {
    p.add(name + ".w", randn(shape, rng, 1.4 / std::sqrt(static_cast<double>(fan_in))));
    p.add(name + ".b", Tensor::zeros({bias}));
}

Tensor conv(const ParamSet& p, const std::string& name, const Tensor& x, std::size_t stride, std::size_t pad) {
    return conv2d(x, p.get(name + ".w"), p.get(name + ".b"), stride, pad);
}

Tensor deconv(const ParamSet& p, const std::string& name, const Tensor& x) {
    return conv_transpose2d(x, p.get(name + ".w"), p.get(name + ".b"), 2, 1);
}

}  // namespace

Quantized vq_quantize(const Tensor& z, const Tensor& book) {
    if (!book.defined() || book.rank() != 2 || book.dim(0) == 0)
        throw ContractError("vq_quantize: codebook must be a nonempty [M, d] table");
    const std::size_t m = book.dim(0), d = book.dim(1);
    if (z.rank() == 0 || z.shape().back() != d)
        throw DimensionError("vq_quantize: trailing axis " + shape_str(z.shape()) + " does not match code dim " +
                             std::to_string(d));
    const auto zv = z.data();
    const auto bv = book.data();
    const std::size_t rows = z.numel() / d;
    Quantized q;
    q.codes.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t e = 0; e < m; ++e) {
            double dist = 0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = zv[r * d + c] - bv[e * d + c];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                arg = static_cast<int>(e);
            }
        }
        q.codes[r] = arg;
    }
    q.zq = reshape(embedding(book, q.codes), z.shape());
    return q;
}

VqModel VqModel::make(Rng& rng, std::size_t codes, std::size_t dim) {
    if (codes == 0 || dim == 0) throw ContractError("VqModel: codebook size and code dim must be positive");
    VqModel v;
    auto& p = v.params_;
    add_conv(p, "enc.c1", {kWidth, 3, 4, 4}, 48, kWidth, rng);                 // 64 -> 32
    add_conv(p, "enc.c2", {kWidth, kWidth, 4, 4}, kWidth * 16, kWidth, rng);   // 32 -> 16
    add_conv(p, "enc.c3", {kWidth, kWidth, 4, 4}, kWidth * 16, kWidth, rng);   // 16 -> 8
    add_conv(p, "enc.c4", {dim, kWidth, 3, 3}, kWidth * 9, dim, rng);
    p.add("codebook", randn({codes, dim}, rng, 1.0));
    add_conv(p, "dec.c1", {kWidth, dim, 3, 3}, dim * 9, kWidth, rng);
    add_conv(p, "dec.u1", {kWidth, kWidth, 4, 4}, kWidth * 4, kWidth, rng);  // 8 -> 16
    add_conv(p, "dec.u2", {kWidth, kWidth, 4, 4}, kWidth * 4, kWidth, rng);  // 16 -> 32
    add_conv(p, "dec.u3", {kWidth, 16, 4, 4}, kWidth * 4, 16, rng);          // 32 -> 64
    add_conv(p, "dec.c2", {3, 16, 3, 3}, 16 * 9, 3, rng);
    return v;
}

Tensor VqModel::encode(const Tensor& pixels) const {
    const auto& s = pixels.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != kHqSide || s[3] != kHqSide)
        throw DimensionError("VQ encoder expects [N, 3, 64, 64], got " + shape_str(s));
    const auto& p = params_;
    Tensor h = silu(conv(p, "enc.c1", pixels, 2, 1));
    h = silu(conv(p, "enc.c2", h, 2, 1));
    h = silu(conv(p, "enc.c3", h, 2, 1));
    h = conv(p, "enc.c4", h, 1, 1);  // [N, d, 8, 8]
    return reshape(permute(h, {0, 2, 3, 1}), {s[0], kCodeTokens, code_dim()});
}

Tensor VqModel::decode(const Tensor& tokens) const {
    const auto& s = tokens.shape();
    if (s.size() != 3 || s[1] != kCodeTokens || s[2] != code_dim())
        throw DimensionError("VQ decoder expects [N, 64, d] tokens, got " + shape_str(s));
    const auto& p = params_;
    Tensor h = permute(reshape(tokens, {s[0], kCodeGrid, kCodeGrid, s[2]}), {0, 3, 1, 2});
    h = silu(conv(p, "dec.c1", h, 1, 1));
    h = silu(deconv(p, "dec.u1", h));
    h = silu(deconv(p, "dec.u2", h));
    h = silu(deconv(p, "dec.u3", h));
    return conv(p, "dec.c2", h, 1, 1);
}

Tensor VqModel::decode_codes(const std::vector<int>& codes, std::size_t frames) const {
    if (codes.size() != frames * kCodeTokens)
        throw ContractError("decode_codes: " + std::to_string(codes.size()) + " codes for " +
                            std::to_string(frames) + " frames");
    for (int c : codes)
        if (c < 0 || static_cast<std::size_t>(c) >= codebook_size())
            throw ContractError("decode_codes: code " + std::to_string(c) + " outside the codebook");
    return decode(reshape(embedding(codebook(), codes), {frames, kCodeTokens, code_dim()}));
}

std::vector<int> VqModel::frame_codes(const std::vector<Image>& hq_frames) const {
    NoGradGuard guard;
    return vq_quantize(encode(images_to_batch(hq_frames)), codebook()).codes;
}

std::vector<Image> VqModel::reconstruct(const std::vector<Image>& hq_frames) const {
    NoGradGuard guard;
    const Tensor rec = decode_codes(frame_codes(hq_frames), hq_frames.size());
    std::vector<Image> out;
    for (std::size_t i = 0; i < hq_frames.size(); ++i) out.push_back(chw_to_image(reshape(slice(rec, 0, i, i + 1), {3, kHqSide, kHqSide})));
    return out;
}

std::vector<NamedTensor> VqModel::to_records() const {
    auto out = h2m::to_records(params_, "vq.");
    out.push_back({"vq.trained", Tensor::scalar(trained_ ? 1.0 : 0.0)});
    return out;
}

VqModel VqModel::from_records(const std::vector<NamedTensor>& records) {
    const auto* book = find_record(records, "vq.codebook");
    if (!book || book->tensor.rank() != 2) throw ValidationError("checkpoint has no VQ codebook");
    Rng rng(0);
    VqModel v = make(rng, book->tensor.dim(0), book->tensor.dim(1));
    assign_from_records(v.params_, records, "vq.");
    const auto* t = find_record(records, "vq.trained");
    v.trained_ = t && t->tensor.item() != 0.0;
    return v;
}

std::vector<double> train_vq(VqModel& model, const std::vector<Image>& hq_frames, const VqTrainConfig& cfg,
                             Rng& rng) {
    if (hq_frames.empty()) throw ContractError("train_vq: empty frame pool");
    if (cfg.commitment < 0) throw ValidationError("train_vq: commitment weight must be >= 0");
    auto& params = model.params();
    Tensor book = model.codebook();
    const std::size_t m = model.codebook_size(), d = model.code_dim();
    AdamState adam;
    std::vector<double> log;
    std::vector<std::size_t> usage(m, 0);

    // Replaces entries with encoder outputs drawn from the current batch.
    auto reseed = [&](const Tensor& tokens, const std::vector<std::size_t>& which) {
        const auto tv = tokens.data();
        const std::size_t rows = tokens.numel() / d;
        auto bv = book.mutable_data();
        for (std::size_t e : which) {
            const std::size_t r = rng.below(rows);
            for (std::size_t c = 0; c < d; ++c) bv[e * d + c] = tv[r * d + c] + 1e-3 * rng.normal();
        }
    };

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<Image> batch;
        for (std::size_t b = 0; b < cfg.batch; ++b) batch.push_back(hq_frames[rng.below(hq_frames.size())]);
        const Tensor x = images_to_batch(batch);
        const Tensor z = model.encode(x);
        if (step == 0) {
            std::vector<std::size_t> all(m);
            for (std::size_t e = 0; e < m; ++e) all[e] = e;
            reseed(z.detach(), all);
        }
        const Quantized q = vq_quantize(z, book);
        for (int c : q.codes) ++usage[static_cast<std::size_t>(c)];
        const Tensor zq_st = add(z, sub(q.zq, z).detach());  // straight-through
        const Tensor rec = model.decode(zq_st);
        Tensor loss = add(add(mse(rec, x), mse(q.zq, z.detach())), scale(mse(z, q.zq.detach()), cfg.commitment));
        params.zero_grad();
        loss.backward();
        const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
        adam_step(params, adam, cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
        log.push_back(loss.item());
        if (!std::isfinite(log.back())) throw StateError("train_vq: non-finite loss at step " + std::to_string(step));

        if (cfg.revive_every > 0 && (step + 1) % cfg.revive_every == 0 && step + 1 < cfg.steps * 3 / 4) {
            std::vector<std::size_t> dead;
            for (std::size_t e = 0; e < m; ++e)
                if (usage[e] == 0) dead.push_back(e);
            reseed(z.detach(), dead);
            usage.assign(m, 0);
        }
    }
    model.mark_trained();
    return log;
}

}  // namespace h2m
