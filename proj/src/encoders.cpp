#include "defend/encoders.hpp"

#include <cmath>

namespace defend {

PositionalMode positional_mode_from_string(const std::string& s) {
    if (s == "absolute") return PositionalMode::kAbsolute;
    if (s == "relative") return PositionalMode::kRelative;
    throw ConfigError("positional mode must be 'absolute' or 'relative', got '" + s + "'");
}

std::string to_string(PositionalMode m) {
    return m == PositionalMode::kAbsolute ? "absolute" : "relative";
}

namespace {

int vision_rel_buckets(int grid_side) {
    const int span = 2 * grid_side - 1;
    return span * span + 2;  // patch-pair buckets plus cls-query / cls-key
}

// Per-head trainable logit biases for a token sequence. flat_indices gives
// each token's grid flat index, or -1 for the class token.
std::vector<Tensor> vision_rel_bias(const ParamMap& params, const EncoderConfig& cfg,
                                    const std::vector<int>& flat_indices) {
    const int g = cfg.grid_side();
    const int span = 2 * g - 1;
    const int n_buckets = vision_rel_buckets(g);
    const int n = static_cast<int>(flat_indices.size());
    std::vector<int> bucket(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            int b;
            if (flat_indices[i] < 0)
                b = n_buckets - 2;
            else if (flat_indices[j] < 0)
                b = n_buckets - 1;
            else {
                const int dr = flat_indices[i] / g - flat_indices[j] / g;
                const int dc = flat_indices[i] % g - flat_indices[j] % g;
                b = (dr + g - 1) * span + (dc + g - 1);
            }
            bucket[static_cast<std::size_t>(i) * n + j] = b;
        }
    }
    const Tensor& table = params.at("rel_bias");
    std::vector<Tensor> per_head;
    per_head.reserve(cfg.num_heads);
    for (int h = 0; h < cfg.num_heads; ++h) {
        Tensor row = transpose(slice_rows(table, h, 1));  // n_buckets x 1
        per_head.push_back(reshape(gather_rows(row, bucket), n, n));
    }
    return per_head;
}

std::vector<Tensor> text_rel_bias(const ParamMap& params, const EncoderConfig& cfg, int n) {
    const int offset = cfg.max_tokens - 1;
    std::vector<int> bucket(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            bucket[static_cast<std::size_t>(i) * n + j] = i - j + offset;
    const Tensor& table = params.at("rel_bias");
    std::vector<Tensor> per_head;
    for (int h = 0; h < cfg.num_heads; ++h) {
        Tensor row = transpose(slice_rows(table, h, 1));
        per_head.push_back(reshape(gather_rows(row, bucket), n, n));
    }
    return per_head;
}

Tensor run_blocks(const ParamMap& params, const EncoderConfig& cfg, Tensor x,
                  const EncodeOptions& opts, const std::vector<Tensor>* rel_bias) {
    const AttentionConfig attn = cfg.attention();
    for (int l = 0; l < cfg.num_layers; ++l) {
        BlockOptions bopts;
        bopts.trace = opts.trace;
        bopts.dropout_rate = opts.dropout_rate;
        bopts.rng = opts.rng;
        bopts.rel_bias = rel_bias;
        x = transformer_block(x, attn, block_params(params, "blk" + std::to_string(l)),
                              bopts);
    }
    return x;
}

}  // namespace

ParamMap init_vision_params(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamMap p;
    const int flat = cfg.patch_size * cfg.patch_size * 3;
    param(p, "patch_proj.w", flat, cfg.model_dim, rng);
    param(p, "patch_proj.b", 1, cfg.model_dim, rng);
    param(p, "cls", 1, cfg.model_dim, rng);
    param(p, "pos", cfg.num_patches(), cfg.model_dim, rng);
    for (int l = 0; l < cfg.num_layers; ++l)
        init_block_params(p, "blk" + std::to_string(l), cfg.model_dim, rng);
    if (cfg.positional == PositionalMode::kRelative)
        param(p, "rel_bias", cfg.num_heads, vision_rel_buckets(cfg.grid_side()), rng);
    return p;
}

ParamMap init_text_params(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamMap p;
    param(p, "tok", cfg.vocab_size, cfg.model_dim, rng);
    param(p, "pos", cfg.max_tokens, cfg.model_dim, rng);
    for (int l = 0; l < cfg.num_layers; ++l)
        init_block_params(p, "blk" + std::to_string(l), cfg.model_dim, rng);
    if (cfg.positional == PositionalMode::kRelative)
        param(p, "rel_bias", cfg.num_heads, 2 * cfg.max_tokens - 1, rng);
    return p;
}

namespace {

// rows = flattened patch pixels, one patch per row
Tensor patch_pixel_matrix(const std::vector<Patch>& patches, int patch_size) {
    const int flat = patch_size * patch_size * 3;
    Tensor m(static_cast<int>(patches.size()), flat);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        if (patches[i].size != patch_size)
            throw ShapeError("encode: patch size differs from configuration");
        for (int j = 0; j < flat; ++j) m.at(static_cast<int>(i), j) = patches[i].pixels[j];
    }
    return m;
}

}  // namespace

Tensor encode_global(const ParamMap& params, const EncoderConfig& cfg, const Image& image,
                     const EncodeOptions& opts) {
    if (image.height != cfg.image_size || image.width != cfg.image_size)
        throw ShapeError("encode_global: image size " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + " does not match configured " +
                         std::to_string(cfg.image_size));
    auto patches = patchify(image, cfg.patch_size);

    Tensor pixels = patch_pixel_matrix(patches, cfg.patch_size);
    Tensor projected = add_rowvec(matmul(pixels, params.at("patch_proj.w")),
                                  params.at("patch_proj.b"));
    Tensor with_pos = add(projected, params.at("pos"));
    Tensor x = concat_rows({params.at("cls"), with_pos});

    std::vector<Tensor> rel;
    const std::vector<Tensor>* rel_ptr = nullptr;
    if (cfg.positional == PositionalMode::kRelative) {
        std::vector<int> flat_indices{-1};
        for (const auto& p : patches) flat_indices.push_back(p.flat_index);
        rel = vision_rel_bias(params, cfg, flat_indices);
        rel_ptr = &rel;
    }
    Tensor out = run_blocks(params, cfg, x, opts, rel_ptr);
    return slice_rows(out, 0, 1);
}

Tensor encode_patches(const ParamMap& params, const EncoderConfig& cfg,
                      const std::vector<Patch>& retained, const EncodeOptions& opts) {
    if (retained.empty()) throw ContractError("encode_patches: empty patch set");

    Tensor pixels = patch_pixel_matrix(retained, cfg.patch_size);
    std::vector<int> flat_indices;
    flat_indices.reserve(retained.size());
    for (const auto& p : retained) {
        if (p.flat_index < 0 || p.flat_index >= cfg.num_patches())
            throw ContractError("encode_patches: flat index out of range");
        flat_indices.push_back(p.flat_index);
    }
    Tensor projected = add_rowvec(matmul(pixels, params.at("patch_proj.w")),
                                  params.at("patch_proj.b"));
    Tensor x = add(projected, gather_rows(params.at("pos"), flat_indices));

    std::vector<Tensor> rel;
    const std::vector<Tensor>* rel_ptr = nullptr;
    if (cfg.positional == PositionalMode::kRelative) {
        rel = vision_rel_bias(params, cfg, flat_indices);
        rel_ptr = &rel;
    }
    return run_blocks(params, cfg, x, opts, rel_ptr);
}

Tensor encode_text(const ParamMap& params, const EncoderConfig& cfg,
                   const std::vector<int>& token_ids, const EncodeOptions& opts) {
    if (token_ids.empty()) throw ContractError("encode_text: empty token sequence");
    if (static_cast<int>(token_ids.size()) > cfg.max_tokens)
        throw ContractError("encode_text: sequence longer than max_tokens; tokenize "
                            "should have truncated it");
    for (int id : token_ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw ContractError("encode_text: token id " + std::to_string(id) +
                                " outside vocabulary of size " +
                                std::to_string(cfg.vocab_size));

    const int n = static_cast<int>(token_ids.size());
    Tensor x = add(gather_rows(params.at("tok"), token_ids),
                   slice_rows(params.at("pos"), 0, n));

    std::vector<Tensor> rel;
    const std::vector<Tensor>* rel_ptr = nullptr;
    if (cfg.positional == PositionalMode::kRelative) {
        rel = text_rel_bias(params, cfg, n);
        rel_ptr = &rel;
    }
    return run_blocks(params, cfg, x, opts, rel_ptr);
}

Tensor pool_text(const Tensor& f_t) {
    if (!f_t.defined() || f_t.rows() < 1)
        throw ContractError("pool_text: need at least one token row");
    return slice_rows(f_t, 0, 1);
}

}  // namespace defend
