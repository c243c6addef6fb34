#include "h2m/attention.hpp"

#include <cmath>

#include "h2m/error.hpp"
#include "h2m/ops.hpp"

namespace h2m {

void AttentionRecorder::record(const std::string& layer, std::size_t rows, std::size_t cols,
                               std::vector<double> weights) {
    std::lock_guard lock(mutex_);
    maps_.push_back({layer, step_, rows, cols, std::move(weights)});
}

AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
        throw DimensionError("attention expects [B, n, d] operands, got " + shape_str(q.shape()) + ", " +
                             shape_str(k.shape()) + ", " + shape_str(v.shape()));
    if (k.dim(1) == 0) throw ContractError("attention: empty context");
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
    Tensor w = softmax_rows(scale(bmm(q, k, false, true), inv));
    return {bmm(w, v), w};
}

CrossAttentionLayer CrossAttentionLayer::make(ParamSet& params, const std::string& name, std::size_t query_dim,
                                              std::size_t context_dim, std::size_t key_dim, Rng& rng) {
    CrossAttentionLayer layer;
    layer.query = Linear::make(params, name + ".wq", query_dim, key_dim, rng, false);
    layer.key = Linear::make(params, name + ".wk", context_dim, key_dim, rng, false);
    layer.value = Linear::make(params, name + ".wv", context_dim, query_dim, rng, false);
    layer.key_dim = key_dim;
    return layer;
}

AttentionResult CrossAttentionLayer::attend(const Tensor& query_tokens, const Tensor& context) const {
    if (!context.defined() || context.numel() == 0)
        throw ContractError("cross_attention: empty context");
    const bool single = query_tokens.rank() == 2;
    if (single != (context.rank() == 2))
        throw DimensionError("cross_attention: query " + shape_str(query_tokens.shape()) + " and context " +
                             shape_str(context.shape()) + " disagree on batching");
    const Tensor q3 = single ? reshape(query_tokens, {1, query_tokens.dim(0), query_tokens.dim(1)}) : query_tokens;
    const Tensor c3 = single ? reshape(context, {1, context.dim(0), context.dim(1)}) : context;
    if (q3.dim(2) != query.weight.dim(0) || c3.dim(2) != key.weight.dim(0))
        throw DimensionError("cross_attention: query " + shape_str(query_tokens.shape()) + " / context " +
                             shape_str(context.shape()) + " do not match layer widths");
    auto r = scaled_dot_attention(query(q3), key(c3), value(c3));
    if (single) {
        r.output = reshape(r.output, query_tokens.shape());
        r.weights = reshape(r.weights, {query_tokens.dim(0), context.dim(0)});
    }
    return r;
}

void record_attention(AttentionRecorder* recorder, const std::string& layer, const Tensor& weights) {
    if (!recorder) return;
    const auto rows = weights.dim(weights.rank() - 2), cols = weights.dim(weights.rank() - 1);
    const auto d = weights.data();
    recorder->record(layer, rows, cols, std::vector<double>(d.begin(), d.begin() + rows * cols));
}

}  // namespace h2m
