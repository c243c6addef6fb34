#include "h2m/nn.hpp"

#include <cmath>

#include "h2m/error.hpp"
#include "h2m/ops.hpp"
#include "h2m/rng.hpp"

namespace h2m {

Tensor ParamSet::add(std::string name, Tensor tensor) {
    if (contains(name)) throw ContractError("duplicate parameter name: " + name);
    tensor.set_requires_grad(true);
    items_.emplace_back(std::move(name), tensor);
    return tensor;
}

Tensor ParamSet::get(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return t;
    throw ContractError("unknown parameter: " + name);
}

bool ParamSet::contains(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return true;
    return false;
}

std::size_t ParamSet::numel() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

void ParamSet::zero_grad() {
    for (auto& [n, t] : items_) t.zero_grad();
}

void ParamSet::copy_values_from(const ParamSet& other) {
    for (auto& [name, t] : items_) {
        const auto src = other.get(name);
        if (src.shape() != t.shape())
            throw DimensionError("parameter " + name + ": shape " + shape_str(src.shape()) + " vs " + shape_str(t.shape()));
        auto dst = t.mutable_data();
        const auto sv = src.data();
        std::copy(sv.begin(), sv.end(), dst.begin());
    }
}

Linear Linear::make(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                    bool with_bias, double gain) {
    Linear l;
    l.weight = params.add(name + ".weight", gain == 0.0 ? Tensor::zeros({in, out})
                                                        : randn({in, out}, rng, gain / std::sqrt(static_cast<double>(in))));
    if (with_bias) l.bias = params.add(name + ".bias", Tensor::zeros({out}));
    return l;
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

LayerNormAffine LayerNormAffine::make(ParamSet& params, const std::string& name, std::size_t dim) {
    return {params.add(name + ".gain", Tensor::full({dim}, 1.0)), params.add(name + ".bias", Tensor::zeros({dim}))};
}

Tensor LayerNormAffine::operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

Mlp Mlp::make(ParamSet& params, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng,
              bool zero_last) {
    Mlp m;
    m.fc1 = Linear::make(params, name + ".fc1", in, hidden, rng);
    m.fc2 = Linear::make(params, name + ".fc2", hidden, out, rng, true, zero_last ? 0.0 : 1.0);
    return m;
}

Tensor Mlp::operator()(const Tensor& x) const { return fc2(silu(fc1(x))); }

void randomize_params(ParamSet& params, Rng& rng, double stddev) {
    for (auto& [name, t] : params.items()) {
        auto copy = t;
        for (auto& v : copy.mutable_data()) v = rng.normal() * stddev;
    }
}

}  // namespace h2m
