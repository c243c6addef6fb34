#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "h2m/tensor.hpp"

namespace h2m {

class Rng;

// Tables are stored at index t-1 for diffusion step t in 1..T.
struct NoiseSchedule {
    std::size_t steps = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma;

    double beta_at(std::size_t t) const { return beta[t - 1]; }
    double alpha_at(std::size_t t) const { return alpha[t - 1]; }
    double alpha_bar_at(std::size_t t) const { return alpha_bar[t - 1]; }
    double sigma_at(std::size_t t) const { return sigma[t - 1]; }
    void check_step(std::size_t t) const;
};

// Linear beta ramp; sigma_t = sqrt(beta_t).
NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end);
inline NoiseSchedule default_schedule() { return make_schedule(1000, 1e-4, 0.02); }
// Short schedule used for desk-scale sampling; still ends near pure noise.
inline NoiseSchedule fast_schedule() { return make_schedule(50, 1e-3, 0.2); }

// zt = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, with a caller-chosen eps.
Tensor diffuse_with(const Tensor& z0, std::size_t t, const NoiseSchedule& sched, const Tensor& eps);
// Draws eps ~ N(0, I); returns (zt, eps).
std::pair<Tensor, Tensor> forward_diffuse(const Tensor& z0, std::size_t t, const NoiseSchedule& sched, Rng& rng);

// Leading axis of z0 is the batch; each element carries its own step.
struct DiffusionBatch {
    Tensor z0;
    std::vector<std::size_t> t;
    Tensor eps;
    Tensor zt;
};

DiffusionBatch make_batch(const Tensor& z0, std::vector<std::size_t> t, const NoiseSchedule& sched, Rng& rng);
// Uniform steps in 1..T for every batch element.
DiffusionBatch make_random_batch(const Tensor& z0, const NoiseSchedule& sched, Rng& rng);

// Predicts eps from (zt, per-element step). Conditioning is captured by the closure.
using EpsPredictor = std::function<Tensor(const Tensor& zt, std::span<const std::size_t> t)>;

// Per-element mean of (eps - eps_hat)^2, uniform weight over steps.
Tensor denoise_loss(const EpsPredictor& predictor, const DiffusionBatch& batch);

// Min-SNR weights: min(1, gamma (1 - abar_t) / abar_t) per element; gamma 0 gives all ones.
// Low-noise steps otherwise dominate the eps loss, and the conditioning that
// only matters at high noise is never learned.
std::vector<double> min_snr_weights(const NoiseSchedule& sched, std::span<const std::size_t> t, double gamma);

// Per-element mean of w_b (eps - eps_hat)^2, one weight per batch element.
Tensor denoise_loss(const EpsPredictor& predictor, const DiffusionBatch& batch, std::span<const double> weights);

// One ancestral step t -> t-1. `add_noise` false suppresses the sigma_t n term
// (always off at t = 1).
Tensor ddpm_step(const Tensor& zt, std::size_t t, const Tensor& eps_hat, const NoiseSchedule& sched, Rng& rng,
                 bool add_noise = true);

// z_T ~ N(0, I) then ddpm_step for t = T..1. Runs without recording gradients.
Tensor sample(const EpsPredictor& predictor, const Shape& shape, const NoiseSchedule& sched, Rng& rng);

}  // namespace h2m
