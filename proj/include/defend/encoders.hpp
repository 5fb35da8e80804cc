#pragma once

#include <string>
#include <vector>

#include "defend/image.hpp"
#include "defend/nn.hpp"
#include "defend/patching.hpp"

namespace defend {

enum class PositionalMode { kAbsolute, kRelative };

PositionalMode positional_mode_from_string(const std::string& s);
std::string to_string(PositionalMode m);

struct EncoderConfig {
    int model_dim = 128;
    int num_layers = 4;       // L_e for vision, L_t for text (both configurable)
    int num_heads = 4;
    int patch_size = 8;
    int image_size = 64;      // H = W
    int max_tokens = 16;      // N_T cap for the text encoder
    int vocab_size = 4;       // set after the vocabulary is built
    double dropout = 0.0;
    PositionalMode positional = PositionalMode::kAbsolute;

    int grid_side() const { return image_size / patch_size; }
    int num_patches() const { return grid_side() * grid_side(); }

    void validate() const {
        if (model_dim <= 0 || num_layers <= 0 || num_heads <= 0)
            throw ConfigError("encoder: dims/layers/heads must be positive");
        if (model_dim % num_heads != 0)
            throw ConfigError("encoder: model_dim must be divisible by num_heads");
        if (patch_size <= 0 || image_size % patch_size != 0)
            throw ConfigError("encoder: image_size must divide by patch_size");
        if (max_tokens < 2 || vocab_size < 4)
            throw ConfigError("encoder: max_tokens >= 2 and vocab_size >= 4 required");
    }
    AttentionConfig attention() const {
        return AttentionConfig::make(model_dim, num_heads);
    }
};

// Raw and FEM-enhanced features for one sample.
struct FeatureBundle {
    Tensor f_g;   // 1 x D global (teacher)
    Tensor f_p;   // N_Ps x D patch (student)
    Tensor f_t;   // N_T x D text
    Tensor f_gs;  // enhanced counterparts
    Tensor f_ps;
    Tensor f_ts;
};

ParamMap init_vision_params(const EncoderConfig& cfg, Rng& rng);
ParamMap init_text_params(const EncoderConfig& cfg, Rng& rng);

struct EncodeOptions {
    AttnTrace* trace = nullptr;  // collects attention weights per block/head
    double dropout_rate = 0.0;
    Rng* rng = nullptr;
};

// Full patch grid plus a learnable class token through the transformer
// stack; returns the final class-token row (1 x D).
Tensor encode_global(const ParamMap& params, const EncoderConfig& cfg, const Image& image,
                     const EncodeOptions& opts = {});

// Retained patches only; position embeddings are looked up by the original
// flat grid index so sampling does not disturb spatial identity.
Tensor encode_patches(const ParamMap& params, const EncoderConfig& cfg,
                      const std::vector<Patch>& retained, const EncodeOptions& opts = {});

// Token + position embeddings through the text stack; ids must be < vocab_size.
Tensor encode_text(const ParamMap& params, const EncoderConfig& cfg,
                   const std::vector<int>& token_ids, const EncodeOptions& opts = {});

// First-token (CLS position) row of an N_T x D feature matrix.
Tensor pool_text(const Tensor& f_t);

}  // namespace defend
