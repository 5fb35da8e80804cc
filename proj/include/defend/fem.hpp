#pragma once

#include "defend/encoders.hpp"

namespace defend {

enum class TextAttendsTo { kGlobal, kConcatGlobalPatch };

TextAttendsTo text_attends_to_from_string(const std::string& s);
std::string to_string(TextAttendsTo t);

struct FemConfig {
    int model_dim = 128;
    int num_heads = 4;
    // residual style wraps every stage as LN(x + sublayer(x)); plain applies
    // the sublayer only (used by the zero-weight baselines)
    bool residual = true;
    TextAttendsTo text_attends_to = TextAttendsTo::kGlobal;

    AttentionConfig attention() const { return AttentionConfig::make(model_dim, num_heads); }
};

// Parameter layout: self-attention blocks self_t / self_g / self_p, cross
// blocks cross_tv / cross_vt (the latter shared by the global and patch
// streams), refinement networks refine_t / refine_g / refine_p.
ParamMap init_fem_params(const FemConfig& cfg, Rng& rng);

// One attention stage through a named block: residual + layer norm around
// multi-head attention when cfg.residual is set.
Tensor fem_attend(const ParamMap& p, const FemConfig& cfg, const std::string& block,
                  const Tensor& x_q, const Tensor& x_kv);

// Refinement feed-forward stage (refine_t / refine_g / refine_p).
Tensor fem_refine(const ParamMap& p, const FemConfig& cfg, const std::string& block,
                  const Tensor& x);

// h^ = Attention(f, f, f) through the modality's self block.
Tensor self_enhance(const ParamMap& p, const FemConfig& cfg, const std::string& block,
                    const Tensor& f);

// f_T* = F_T(A_TV(h_T, h_V, h_V)): text queries over visual keys/values.
Tensor cross_enhance_text(const ParamMap& p, const FemConfig& cfg, const Tensor& h_t,
                          const Tensor& h_v);

enum class VisualStream { kGlobal, kPatch };

// f_V* = F_V(A_VT(h_V, h_T, h_T)) for V in {G, P}.
Tensor cross_enhance_visual(const ParamMap& p, const FemConfig& cfg, const Tensor& h_v,
                            const Tensor& h_t, VisualStream which);

// Fills the enhanced fields of the bundle; raw fields are left untouched.
void fem_forward(const ParamMap& p, const FemConfig& cfg, FeatureBundle& bundle);

}  // namespace defend
