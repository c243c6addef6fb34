#pragma once

#include <string>
#include <utility>
#include <vector>

#include "h2m/tensor.hpp"

namespace h2m {

class Rng;

// Ordered registry of trainable tensors. Order is the checkpoint order.
class ParamSet {
   public:
    Tensor add(std::string name, Tensor tensor);
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    Tensor get(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::size_t size() const { return items_.size(); }
    std::size_t numel() const;
    void zero_grad();
    // Copies values from `other` by name; shapes must agree.
    void copy_values_from(const ParamSet& other);

   private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out] or undefined

    static Linear make(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       bool with_bias = true, double gain = 1.0);
    Tensor operator()(const Tensor& x) const;
};

struct LayerNormAffine {
    Tensor gain;
    Tensor bias;

    static LayerNormAffine make(ParamSet& params, const std::string& name, std::size_t dim);
    Tensor operator()(const Tensor& x) const;
};

// Two-layer SiLU perceptron.
struct Mlp {
    Linear fc1;
    Linear fc2;

    static Mlp make(ParamSet& params, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                    Rng& rng, bool zero_last = false);
    Tensor operator()(const Tensor& x) const;
};

// Overwrites every parameter with N(0, stddev^2) draws. Used by gradient checks
// to leave zero-initialized layers.
void randomize_params(ParamSet& params, Rng& rng, double stddev);

}  // namespace h2m
