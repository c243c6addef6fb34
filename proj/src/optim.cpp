#include "h2m/optim.hpp"

#include <cmath>

#include "h2m/error.hpp"

namespace h2m {

void adam_step(ParamSet& params, AdamState& state, double lr) {
    const auto& items = params.items();
    for (const auto& [name, t] : items)
        if (!t.has_grad()) throw ContractError("adam_step: parameter '" + name + "' has no gradient");
    if (state.m.empty()) {
        for (const auto& [name, t] : items) {
            state.m.emplace_back(t.numel(), 0.0);
            state.v.emplace_back(t.numel(), 0.0);
        }
    }
    if (state.m.size() != items.size()) throw ContractError("adam_step: optimizer state does not match parameter set");
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < items.size(); ++p) {
        auto t = items[p].second;
        auto& m = state.m[p];
        auto& v = state.v[p];
        if (m.size() != t.numel()) throw ContractError("adam_step: moment size mismatch for " + items[p].first);
        const auto g = t.grad();
        auto w = t.mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
        }
    }
}

double clip_grad_norm(ParamSet& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, t] : params.items())
        if (t.has_grad())
            for (double g : t.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (const auto& [name, t] : params.items())
            if (t.has_grad()) {
                // Gradient buffers live on the node; scale them in place.
                auto& g = t.node()->grad;
                for (auto& e : g) e *= s;
            }
    }
    return norm;
}

}  // namespace h2m
