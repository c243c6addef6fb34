#pragma once

#include <cstdint>
#include <vector>

#include "h2m/nn.hpp"

namespace h2m {

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;  // one per parameter, ParamSet order
    std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update. Gradients are left in place.
void adam_step(ParamSet& params, AdamState& state, double lr);

// Scales all gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(ParamSet& params, double max_norm);

}  // namespace h2m
