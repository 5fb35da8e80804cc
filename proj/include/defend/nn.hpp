#pragma once

#include <optional>
#include <string>
#include <vector>

#include "defend/tensor.hpp"

namespace defend {

struct AttentionConfig {
    int model_dim = 128;
    int num_heads = 4;
    int head_dim = 32;

    void validate() const {
        if (model_dim <= 0 || num_heads <= 0 || head_dim <= 0)
            throw ConfigError("AttentionConfig: dimensions must be positive");
        if (model_dim != num_heads * head_dim)
            throw ConfigError("AttentionConfig: model_dim must equal num_heads * head_dim");
    }
    static AttentionConfig make(int model_dim, int num_heads) {
        if (num_heads <= 0 || model_dim % num_heads != 0)
            throw ConfigError("AttentionConfig: model_dim must be divisible by num_heads");
        return AttentionConfig{model_dim, num_heads, model_dim / num_heads};
    }
};

// Collects attention weight matrices (one per head, detached) when passed
// to the attention ops. Used by tests and the attention-map export.
struct AttnTrace {
    std::vector<Tensor> head_weights;
};

// softmax(Q K^T / sqrt(d)) V with optional causal masking. The additive
// mask, when provided, overrides the causal flag.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    bool causal_mask = false,
                                    AttnTrace* trace = nullptr,
                                    const Tensor& additive_mask = Tensor());

// Builds an additive mask where query i may attend to key j iff
// j < prefix_len or j <= i. With prefix_len = 0 this is the causal mask.
Tensor prefix_causal_mask(int n_q, int n_k, int prefix_len);

struct MhaParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Fetches the eight projection tensors under `prefix` + {.attn.wq, ...}.
MhaParams mha_params(const ParamMap& p, const std::string& prefix);
void init_mha_params(ParamMap& p, const std::string& prefix, int dim, Rng& rng);

// rel_bias, when non-null, supplies one trainable N_q x N_k logit bias per
// head (relative positional encoding).
Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv,
                            const AttentionConfig& cfg, const MhaParams& params,
                            AttnTrace* trace = nullptr,
                            const Tensor& additive_mask = Tensor(),
                            const std::vector<Tensor>* rel_bias = nullptr);

struct FfnParams {
    Tensor w1, b1, w2, b2;
};
FfnParams ffn_params(const ParamMap& p, const std::string& prefix);
// hidden width is 4x the model dim, GELU nonlinearity
void init_ffn_params(ParamMap& p, const std::string& prefix, int dim, Rng& rng);
Tensor feed_forward(const Tensor& x, const FfnParams& params);

struct LayerNormParams {
    Tensor gain, bias;
};
LayerNormParams ln_params(const ParamMap& p, const std::string& prefix);
void init_ln_params(ParamMap& p, const std::string& prefix, int dim, Rng& rng);

inline constexpr double kLayerNormEps = 1e-5;

// Pre-norm residual block:
//   x' = x + MSA(LN(x));  out = x' + FFN(LN(x'))
struct BlockParams {
    MhaParams attn;
    LayerNormParams ln1, ln2;
    FfnParams ffn;
};
BlockParams block_params(const ParamMap& p, const std::string& prefix);
void init_block_params(ParamMap& p, const std::string& prefix, int dim, Rng& rng);

struct BlockOptions {
    bool causal = false;
    Tensor additive_mask;       // overrides causal when defined
    AttnTrace* trace = nullptr;
    double dropout_rate = 0.0;  // applied after MSA and FFN when > 0
    Rng* rng = nullptr;
    const std::vector<Tensor>* rel_bias = nullptr;  // per-head logit biases
};

Tensor transformer_block(const Tensor& x, const AttentionConfig& cfg,
                         const BlockParams& params, const BlockOptions& opts = {});

// cosine similarity of two 1xD (or Dx1) vectors; throws on zero norm
double cosine_similarity(const Tensor& a, const Tensor& b);

}  // namespace defend
