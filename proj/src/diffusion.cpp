#include "h2m/diffusion.hpp"

#include <cmath>
#include <string>

#include "h2m/error.hpp"
#include "h2m/ops.hpp"
#include "h2m/rng.hpp"

namespace h2m {

void NoiseSchedule::check_step(std::size_t t) const {
    if (t < 1 || t > steps)
        throw ContractError("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(steps));
}

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 2) throw ContractError("make_schedule: need at least 2 steps");
    if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0))
        throw ContractError("make_schedule: require 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    double run = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
        const double b = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
        run *= 1.0 - b;
        s.beta.push_back(b);
        s.alpha.push_back(1.0 - b);
        s.alpha_bar.push_back(run);
        s.sigma.push_back(std::sqrt(b));
    }
    return s;
}

Tensor diffuse_with(const Tensor& z0, std::size_t t, const NoiseSchedule& sched, const Tensor& eps) {
    sched.check_step(t);
    if (z0.shape() != eps.shape())
        throw DimensionError("diffuse: eps " + shape_str(eps.shape()) + " vs z0 " + shape_str(z0.shape()));
    const double ab = sched.alpha_bar_at(t);
    return add(scale(z0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

std::pair<Tensor, Tensor> forward_diffuse(const Tensor& z0, std::size_t t, const NoiseSchedule& sched, Rng& rng) {
    sched.check_step(t);
    Tensor eps = randn(z0.shape(), rng);
    return {diffuse_with(z0, t, sched, eps), eps};
}

DiffusionBatch make_batch(const Tensor& z0, std::vector<std::size_t> t, const NoiseSchedule& sched, Rng& rng) {
    if (z0.rank() < 1 || z0.dim(0) != t.size())
        throw DimensionError("make_batch: " + std::to_string(t.size()) + " steps for batch " + shape_str(z0.shape()));
    for (auto step : t) sched.check_step(step);
    DiffusionBatch b;
    b.z0 = z0.detach();
    b.eps = randn(z0.shape(), rng);
    const std::size_t per = z0.numel() / t.size();
    std::vector<double> zt(z0.numel());
    const auto x = z0.data(), e = b.eps.data();
    for (std::size_t n = 0; n < t.size(); ++n) {
        const double ab = sched.alpha_bar_at(t[n]);
        const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) zt[i] = a * x[i] + s * e[i];
    }
    b.zt = Tensor::from(z0.shape(), std::move(zt));
    b.t = std::move(t);
    return b;
}

DiffusionBatch make_random_batch(const Tensor& z0, const NoiseSchedule& sched, Rng& rng) {
    std::vector<std::size_t> t(z0.dim(0));
    for (auto& step : t) step = 1 + rng.below(sched.steps);
    return make_batch(z0, std::move(t), sched, rng);
}

Tensor denoise_loss(const EpsPredictor& predictor, const DiffusionBatch& batch) {
    Tensor pred = predictor(batch.zt, batch.t);
    if (pred.shape() != batch.eps.shape())
        throw DimensionError("denoise_loss: prediction " + shape_str(pred.shape()) + " vs eps " +
                             shape_str(batch.eps.shape()));
    return mse(pred, batch.eps);
}

std::vector<double> min_snr_weights(const NoiseSchedule& sched, std::span<const std::size_t> t, double gamma) {
    if (gamma < 0.0) throw ContractError("min_snr_weights: gamma must be >= 0");
    std::vector<double> w;
    w.reserve(t.size());
    for (auto step : t) {
        sched.check_step(step);
        const double ab = sched.alpha_bar_at(step);
        w.push_back(gamma == 0.0 ? 1.0 : std::min(1.0, gamma * (1.0 - ab) / ab));
    }
    return w;
}

Tensor denoise_loss(const EpsPredictor& predictor, const DiffusionBatch& batch, std::span<const double> weights) {
    if (weights.size() != batch.t.size())
        throw DimensionError("denoise_loss: " + std::to_string(weights.size()) + " weights for a batch of " +
                             std::to_string(batch.t.size()));
    Tensor pred = predictor(batch.zt, batch.t);
    if (pred.shape() != batch.eps.shape())
        throw DimensionError("denoise_loss: prediction " + shape_str(pred.shape()) + " vs eps " +
                             shape_str(batch.eps.shape()));
    Shape per_b(pred.rank(), 1);
    per_b[0] = weights.size();
    const Tensor diff = sub(pred, batch.eps);
    return mean(mul(mul(diff, diff), Tensor::from(per_b, {weights.begin(), weights.end()})));
}

Tensor ddpm_step(const Tensor& zt, std::size_t t, const Tensor& eps_hat, const NoiseSchedule& sched, Rng& rng,
                 bool add_noise) {
    sched.check_step(t);
    if (zt.shape() != eps_hat.shape())
        throw DimensionError("ddpm_step: eps_hat " + shape_str(eps_hat.shape()) + " vs zt " + shape_str(zt.shape()));
    const double a = sched.alpha_at(t), ab = sched.alpha_bar_at(t);
    const double c = (1.0 - a) / std::sqrt(1.0 - ab), inv = 1.0 / std::sqrt(a);
    const auto z = zt.data(), e = eps_hat.data();
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (z[i] - c * e[i]) * inv;
    if (add_noise && t > 1) {
        const double sig = sched.sigma_at(t);
        for (auto& v : out) v += sig * rng.normal();
    }
    return Tensor::from(zt.shape(), std::move(out));
}

Tensor sample(const EpsPredictor& predictor, const Shape& shape, const NoiseSchedule& sched, Rng& rng) {
    if (shape.empty()) throw ContractError("sample: empty shape");
    NoGradGuard guard;
    Tensor z = randn(shape, rng);
    for (std::size_t t = sched.steps; t >= 1; --t) {
        std::vector<std::size_t> ts(shape[0], t);
        Tensor eps_hat = predictor(z, ts);
        z = ddpm_step(z, t, eps_hat, sched, rng);
    }
    return z;
}

}  // namespace h2m
