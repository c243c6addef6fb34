#pragma once

#include <cstddef>
#include <mutex>
#include <string>
#include <vector>

#include "h2m/nn.hpp"

namespace h2m {

class Rng;

// Collects attention weight matrices during inference for export.
class AttentionRecorder {
   public:
    struct Map {
        std::string layer;
        std::size_t step = 0;  // diffusion step the pass belonged to
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::vector<double> weights;  // row-major rows x cols
    };

    void set_step(std::size_t step) { step_ = step; }
    void record(const std::string& layer, std::size_t rows, std::size_t cols, std::vector<double> weights);
    const std::vector<Map>& maps() const { return maps_; }
    void clear() { maps_.clear(); }

   private:
    std::size_t step_ = 0;
    std::vector<Map> maps_;
    std::mutex mutex_;
};

struct AttentionResult {
    Tensor output;   // [B, nq, dv]
    Tensor weights;  // [B, nq, nc], rows sum to one
};

// softmax(q k^T / sqrt(dk)) v on batched [B, n, d] operands.
AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Query-key-value projections of one attention layer; the value projection
// maps back to the query width so the output can join the residual stream.
struct CrossAttentionLayer {
    Linear query;
    Linear key;
    Linear value;
    std::size_t key_dim = 0;

    static CrossAttentionLayer make(ParamSet& params, const std::string& name, std::size_t query_dim,
                                    std::size_t context_dim, std::size_t key_dim, Rng& rng);

    // query [nq, d] with context [nc, dc], or batched [B, nq, d] with [B, nc, dc].
    AttentionResult attend(const Tensor& query_tokens, const Tensor& context) const;
    Tensor operator()(const Tensor& query_tokens, const Tensor& context) const {
        return attend(query_tokens, context).output;
    }
};

// Records batch element 0 of `weights` [B, nq, nc] when a recorder is attached.
void record_attention(AttentionRecorder* recorder, const std::string& layer, const Tensor& weights);

}  // namespace h2m
