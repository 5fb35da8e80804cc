#include "defend/fem.hpp"

namespace defend {

TextAttendsTo text_attends_to_from_string(const std::string& s) {
    if (s == "global") return TextAttendsTo::kGlobal;
    if (s == "concat") return TextAttendsTo::kConcatGlobalPatch;
    throw ConfigError("fem.text_attends_to must be 'global' or 'concat', got '" + s + "'");
}

std::string to_string(TextAttendsTo t) {
    return t == TextAttendsTo::kGlobal ? "global" : "concat";
}

ParamMap init_fem_params(const FemConfig& cfg, Rng& rng) {
    ParamMap p;
    for (const char* block : {"self_t", "self_g", "self_p", "cross_tv", "cross_vt"}) {
        init_mha_params(p, block, cfg.model_dim, rng);
        init_ln_params(p, std::string(block) + ".ln", cfg.model_dim, rng);
    }
    for (const char* block : {"refine_t", "refine_g", "refine_p"}) {
        init_ffn_params(p, block, cfg.model_dim, rng);
        init_ln_params(p, std::string(block) + ".ln", cfg.model_dim, rng);
    }
    return p;
}

Tensor fem_attend(const ParamMap& p, const FemConfig& cfg, const std::string& block,
                  const Tensor& x_q, const Tensor& x_kv) {
    Tensor attended = multi_head_attention(x_q, x_kv, cfg.attention(),
                                           mha_params(p, block));
    if (!cfg.residual) return attended;
    auto ln = ln_params(p, block + ".ln");
    return layer_norm(add(x_q, attended), ln.gain, ln.bias, kLayerNormEps);
}

Tensor fem_refine(const ParamMap& p, const FemConfig& cfg, const std::string& block,
                  const Tensor& x) {
    Tensor out = feed_forward(x, ffn_params(p, block));
    if (!cfg.residual) return out;
    auto ln = ln_params(p, block + ".ln");
    return layer_norm(add(x, out), ln.gain, ln.bias, kLayerNormEps);
}

Tensor self_enhance(const ParamMap& p, const FemConfig& cfg, const std::string& block,
                    const Tensor& f) {
    if (!f.defined() || f.rows() < 1) throw ShapeError("self_enhance: empty input");
    return fem_attend(p, cfg, block, f, f);
}

Tensor cross_enhance_text(const ParamMap& p, const FemConfig& cfg, const Tensor& h_t,
                          const Tensor& h_v) {
    Tensor crossed = fem_attend(p, cfg, "cross_tv", h_t, h_v);
    return fem_refine(p, cfg, "refine_t", crossed);
}

Tensor cross_enhance_visual(const ParamMap& p, const FemConfig& cfg, const Tensor& h_v,
                            const Tensor& h_t, VisualStream which) {
    Tensor crossed = fem_attend(p, cfg, "cross_vt", h_v, h_t);
    return fem_refine(p, cfg, which == VisualStream::kGlobal ? "refine_g" : "refine_p",
                      crossed);
}

void fem_forward(const ParamMap& p, const FemConfig& cfg, FeatureBundle& bundle) {
    if (!bundle.f_g.defined() || !bundle.f_p.defined() || !bundle.f_t.defined())
        throw ContractError("fem_forward: bundle must carry f_g, f_p and f_t");

    Tensor h_t = self_enhance(p, cfg, "self_t", bundle.f_t);
    Tensor h_g = self_enhance(p, cfg, "self_g", bundle.f_g);
    Tensor h_p = self_enhance(p, cfg, "self_p", bundle.f_p);

    Tensor text_kv = h_g;
    if (cfg.text_attends_to == TextAttendsTo::kConcatGlobalPatch)
        text_kv = concat_rows({h_g, h_p});

    bundle.f_ts = cross_enhance_text(p, cfg, h_t, text_kv);
    bundle.f_gs = cross_enhance_visual(p, cfg, h_g, h_t, VisualStream::kGlobal);
    bundle.f_ps = cross_enhance_visual(p, cfg, h_p, h_t, VisualStream::kPatch);
}

}  // namespace defend
