#include "defend/nn.hpp"

#include <cmath>
#include <limits>

namespace defend {

Tensor prefix_causal_mask(int n_q, int n_k, int prefix_len) {
    Tensor mask(n_q, n_k);
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n_q; ++i)
        for (int j = 0; j < n_k; ++j)
            if (j >= prefix_len && j > i) mask.at(i, j) = neg_inf;
    return mask;
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    bool causal_mask, AttnTrace* trace,
                                    const Tensor& additive_mask) {
    if (!q.defined() || !k.defined() || !v.defined())
        throw ShapeError("attention: undefined input");
    if (q.cols() != k.cols())
        throw ShapeError("attention: query/key dimension mismatch");
    if (k.rows() != v.rows())
        throw ShapeError("attention: key/value row mismatch");
    if (!all_finite(q) || !all_finite(k) || !all_finite(v))
        throw NumericError("attention: non-finite input");

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor logits = scale(matmul(q, transpose(k)), inv_sqrt_d);
    Tensor mask = additive_mask;
    if (!mask.defined() && causal_mask) {
        if (q.rows() != k.rows())
            throw ShapeError("attention: causal mask needs square weights");
        mask = prefix_causal_mask(q.rows(), k.rows(), 0);
    }
    Tensor weights = softmax_rows(logits, mask);
    if (trace) trace->head_weights.push_back(weights.detach());
    return matmul(weights, v);
}

MhaParams mha_params(const ParamMap& p, const std::string& prefix) {
    auto get = [&](const char* name) -> const Tensor& {
        auto it = p.find(prefix + name);
        if (it == p.end())
            throw ContractError("missing parameter " + prefix + name);
        return it->second;
    };
    return MhaParams{get(".attn.wq"), get(".attn.bq"), get(".attn.wk"), get(".attn.bk"),
                     get(".attn.wv"), get(".attn.bv"), get(".attn.wo"), get(".attn.bo")};
}

void init_mha_params(ParamMap& p, const std::string& prefix, int dim, Rng& rng) {
    param(p, prefix + ".attn.wq", dim, dim, rng);
    param(p, prefix + ".attn.bq", 1, dim, rng);
    param(p, prefix + ".attn.wk", dim, dim, rng);
    param(p, prefix + ".attn.bk", 1, dim, rng);
    param(p, prefix + ".attn.wv", dim, dim, rng);
    param(p, prefix + ".attn.bv", 1, dim, rng);
    param(p, prefix + ".attn.wo", dim, dim, rng);
    param(p, prefix + ".attn.bo", 1, dim, rng);
}

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv,
                            const AttentionConfig& cfg, const MhaParams& params,
                            AttnTrace* trace, const Tensor& additive_mask,
                            const std::vector<Tensor>* rel_bias) {
    cfg.validate();
    if (x_q.cols() != cfg.model_dim || x_kv.cols() != cfg.model_dim)
        throw ShapeError("multi_head_attention: input dim != model_dim");
    if (rel_bias && static_cast<int>(rel_bias->size()) != cfg.num_heads)
        throw ShapeError("multi_head_attention: need one bias per head");

    Tensor q = add_rowvec(matmul(x_q, params.wq), params.bq);
    Tensor k = add_rowvec(matmul(x_kv, params.wk), params.bk);
    Tensor v = add_rowvec(matmul(x_kv, params.wv), params.bv);

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
    std::vector<Tensor> heads;
    heads.reserve(cfg.num_heads);
    for (int h = 0; h < cfg.num_heads; ++h) {
        const int c0 = h * cfg.head_dim;
        Tensor qh = slice_cols(q, c0, cfg.head_dim);
        Tensor kh = slice_cols(k, c0, cfg.head_dim);
        Tensor vh = slice_cols(v, c0, cfg.head_dim);
        Tensor logits = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
        if (rel_bias) logits = add(logits, (*rel_bias)[h]);
        Tensor weights = softmax_rows(logits, additive_mask);
        if (trace) trace->head_weights.push_back(weights.detach());
        heads.push_back(matmul(weights, vh));
    }
    Tensor concat = cfg.num_heads == 1 ? heads[0] : concat_cols(heads);
    return add_rowvec(matmul(concat, params.wo), params.bo);
}

FfnParams ffn_params(const ParamMap& p, const std::string& prefix) {
    auto get = [&](const char* name) -> const Tensor& {
        auto it = p.find(prefix + name);
        if (it == p.end())
            throw ContractError("missing parameter " + prefix + name);
        return it->second;
    };
    return FfnParams{get(".ffn.w1"), get(".ffn.b1"), get(".ffn.w2"), get(".ffn.b2")};
}

void init_ffn_params(ParamMap& p, const std::string& prefix, int dim, Rng& rng) {
    const int hidden = 4 * dim;
    param(p, prefix + ".ffn.w1", dim, hidden, rng);
    param(p, prefix + ".ffn.b1", 1, hidden, rng);
    param(p, prefix + ".ffn.w2", hidden, dim, rng);
    param(p, prefix + ".ffn.b2", 1, dim, rng);
}

Tensor feed_forward(const Tensor& x, const FfnParams& params) {
    Tensor h = gelu(add_rowvec(matmul(x, params.w1), params.b1));
    return add_rowvec(matmul(h, params.w2), params.b2);
}

LayerNormParams ln_params(const ParamMap& p, const std::string& prefix) {
    auto gi = p.find(prefix + ".g");
    auto bi = p.find(prefix + ".b");
    if (gi == p.end() || bi == p.end())
        throw ContractError("missing layer norm parameters at " + prefix);
    return LayerNormParams{gi->second, bi->second};
}

void init_ln_params(ParamMap& p, const std::string& prefix, int dim, Rng& rng) {
    (void)rng;
    auto it = p.find(prefix + ".g");
    if (it == p.end()) {
        Tensor g = Tensor::full(1, dim, 1.0);
        g.set_requires_grad(true);
        p.emplace(prefix + ".g", std::move(g));
        Tensor b = Tensor::zeros(1, dim, true);
        p.emplace(prefix + ".b", std::move(b));
    }
}

BlockParams block_params(const ParamMap& p, const std::string& prefix) {
    return BlockParams{mha_params(p, prefix), ln_params(p, prefix + ".ln1"),
                       ln_params(p, prefix + ".ln2"), ffn_params(p, prefix)};
}

void init_block_params(ParamMap& p, const std::string& prefix, int dim, Rng& rng) {
    init_ln_params(p, prefix + ".ln1", dim, rng);
    init_mha_params(p, prefix, dim, rng);
    init_ln_params(p, prefix + ".ln2", dim, rng);
    init_ffn_params(p, prefix, dim, rng);
}

Tensor transformer_block(const Tensor& x, const AttentionConfig& cfg,
                         const BlockParams& params, const BlockOptions& opts) {
    if (x.cols() != cfg.model_dim)
        throw ShapeError("transformer_block: input dim != model_dim");
    Tensor mask = opts.additive_mask;
    if (!mask.defined() && opts.causal)
        mask = prefix_causal_mask(x.rows(), x.rows(), 0);
    Tensor normed = layer_norm(x, params.ln1.gain, params.ln1.bias, kLayerNormEps);
    Tensor attn_out = multi_head_attention(normed, normed, cfg, params.attn, opts.trace,
                                           mask, opts.rel_bias);
    if (opts.dropout_rate > 0.0 && opts.rng)
        attn_out = dropout(attn_out, opts.dropout_rate, *opts.rng);
    Tensor mid = add(x, attn_out);
    Tensor normed2 = layer_norm(mid, params.ln2.gain, params.ln2.bias, kLayerNormEps);
    Tensor ffn_out = feed_forward(normed2, params.ffn);
    if (opts.dropout_rate > 0.0 && opts.rng)
        ffn_out = dropout(ffn_out, opts.dropout_rate, *opts.rng);
    return add(mid, ffn_out);
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size())
        throw ShapeError("cosine_similarity: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a.data()[i] * b.data()[i];
        na += a.data()[i] * a.data()[i];
        nb += b.data()[i] * b.data()[i];
    }
    if (na <= 0.0 || nb <= 0.0)
        throw NumericError("cosine_similarity: zero-norm vector");
    double v = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::max(-1.0, std::min(1.0, v));
}

}  // namespace defend
