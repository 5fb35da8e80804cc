#include "defend/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "defend/text.hpp"

namespace defend {

namespace {

int max_prefix_len(const EncoderConfig& ecfg) { return ecfg.max_tokens + 1; }

// positions table covers prefix + BOS + max_length tokens
int pos_table_size(const DecoderConfig& dcfg, const EncoderConfig& ecfg) {
    return max_prefix_len(ecfg) + dcfg.max_length + 1;
}

Tensor run_decoder(const ParamMap& params, const DecoderConfig& dcfg,
                   const EncoderConfig& ecfg, const std::vector<int>& tokens,
                   const Tensor& f_ts, const Tensor& f_gs) {
    if (!f_ts.defined() || !f_gs.defined())
        throw ContractError("decoder: conditioning features missing");
    if (f_gs.rows() != 1 || f_gs.cols() != ecfg.model_dim ||
        f_ts.cols() != ecfg.model_dim)
        throw ShapeError("decoder: conditioning feature shape mismatch");

    Tensor txt = add_rowvec(matmul(f_ts, params.at("txt_proj.w")), params.at("txt_proj.b"));
    Tensor glob = add_rowvec(matmul(f_gs, params.at("glob_proj.w")), params.at("glob_proj.b"));
    Tensor tok_emb = gather_rows(params.at("tok"), tokens);
    Tensor x = concat_rows({txt, glob, tok_emb});

    const int prefix = txt.rows() + 1;
    const int total = x.rows();
    if (total > pos_table_size(dcfg, ecfg))
        throw ContractError("decoder: sequence exceeds position table");
    x = add(x, slice_rows(params.at("pos"), 0, total));

    Tensor mask = prefix_causal_mask(total, total, prefix);
    const AttentionConfig attn = AttentionConfig::make(ecfg.model_dim, ecfg.num_heads);
    for (int l = 0; l < dcfg.num_layers; ++l) {
        BlockOptions opts;
        opts.additive_mask = mask;
        x = transformer_block(x, attn, block_params(params, "blk" + std::to_string(l)),
                              opts);
    }
    return x;
}

}  // namespace

ParamMap init_decoder_params(const DecoderConfig& dcfg, const EncoderConfig& ecfg,
                             Rng& rng) {
    dcfg.validate();
    ParamMap p;
    param(p, "txt_proj.w", ecfg.model_dim, ecfg.model_dim, rng);
    param(p, "txt_proj.b", 1, ecfg.model_dim, rng);
    param(p, "glob_proj.w", ecfg.model_dim, ecfg.model_dim, rng);
    param(p, "glob_proj.b", 1, ecfg.model_dim, rng);
    param(p, "tok", ecfg.vocab_size, ecfg.model_dim, rng);
    param(p, "pos", pos_table_size(dcfg, ecfg), ecfg.model_dim, rng);
    for (int l = 0; l < dcfg.num_layers; ++l)
        init_block_params(p, "blk" + std::to_string(l), ecfg.model_dim, rng);
    param(p, "out.w", ecfg.model_dim, ecfg.vocab_size, rng);
    param(p, "out.b", 1, ecfg.vocab_size, rng);
    return p;
}

Tensor decoder_teacher_forced(const ParamMap& params, const DecoderConfig& dcfg,
                              const EncoderConfig& ecfg, const std::vector<int>& target,
                              const Tensor& f_ts, const Tensor& f_gs) {
    if (target.empty()) throw ContractError("decoder: empty target sequence");
    if (target.front() != kBosId)
        throw ContractError("decoder: target must begin with BOS");
    for (int id : target)
        if (id < 0 || id >= ecfg.vocab_size)
            throw ContractError("decoder: target id outside vocabulary");

    Tensor hidden = run_decoder(params, dcfg, ecfg, target, f_ts, f_gs);
    // row j of the logits predicts target[j]: hidden state at the position
    // *before* target[j] (the f_G* prefix row for j = 0)
    const int prefix = f_ts.rows() + 1;
    const int m = static_cast<int>(target.size());
    Tensor states = slice_rows(hidden, prefix - 1, m);
    return add_rowvec(matmul(states, params.at("out.w")), params.at("out.b"));
}

std::vector<int> TokenTrie::allowed_after(const std::vector<int>& prefix) const {
    std::set<int> allowed;
    for (const auto& cand : candidates) {
        if (cand.size() < prefix.size()) continue;
        if (!std::equal(prefix.begin(), prefix.end(), cand.begin())) continue;
        if (cand.size() == prefix.size())
            allowed.insert(kEosId);
        else
            allowed.insert(cand[prefix.size()]);
    }
    return {allowed.begin(), allowed.end()};
}

namespace {

struct Hypothesis {
    std::vector<int> tokens;  // generated so far, BOS excluded
    double log_prob = 0.0;
    bool done = false;
    TerminationReason reason = TerminationReason::kMaxLength;
};

// deterministic ordering: higher score first, then lexicographically
// smaller token sequence
bool better(const Hypothesis& a, const Hypothesis& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
}

std::vector<double> next_log_probs(const ParamMap& params, const DecoderConfig& dcfg,
                                   const EncoderConfig& ecfg, const Tensor& f_ts,
                                   const Tensor& f_gs, const std::vector<int>& generated) {
    std::vector<int> seq{kBosId};
    seq.insert(seq.end(), generated.begin(), generated.end());
    Tensor logits = [&] {
        Tensor hidden = run_decoder(params, dcfg, ecfg, seq, f_ts, f_gs);
        Tensor last = slice_rows(hidden, hidden.rows() - 1, 1);
        return add_rowvec(matmul(last, params.at("out.w")), params.at("out.b"));
    }();
    Tensor lp = log_softmax_rows(logits);
    std::vector<double> out(lp.cols());
    for (int j = 0; j < lp.cols(); ++j) out[j] = lp.at(0, j);
    return out;
}

}  // namespace

GenerationResult generate(const ParamMap& params, const DecoderConfig& dcfg,
                          const EncoderConfig& ecfg, const Tensor& f_ts,
                          const Tensor& f_gs, DecodeMode mode,
                          const TokenTrie* constraint) {
    dcfg.validate();
    const int beam_size = mode == DecodeMode::kGreedy ? 1 : dcfg.beam_size;

    std::vector<Hypothesis> beam{Hypothesis{}};  // live hypotheses only
    std::vector<Hypothesis> finished;            // collected as EOS is emitted

    for (int step = 0; step < dcfg.max_length && !beam.empty(); ++step) {
        std::vector<Hypothesis> expanded;
        for (const auto& hyp : beam) {
            auto log_probs = next_log_probs(params, dcfg, ecfg, f_ts, f_gs, hyp.tokens);

            std::vector<int> candidates;
            if (constraint && !constraint->empty()) {
                candidates = constraint->allowed_after(hyp.tokens);
                if (candidates.empty()) candidates.push_back(kEosId);
            } else {
                candidates.resize(log_probs.size());
                for (std::size_t j = 0; j < log_probs.size(); ++j)
                    candidates[j] = static_cast<int>(j);
            }

            // best beam_size continuations of this hypothesis; candidates
            // are ascending, so stable sort breaks ties toward lower ids
            std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
                return log_probs[a] > log_probs[b];
            });
            const int take = std::min<int>(beam_size, static_cast<int>(candidates.size()));
            for (int j = 0; j < take; ++j) {
                Hypothesis next = hyp;
                const int tok = candidates[j];
                next.tokens.push_back(tok);
                next.log_prob += log_probs[tok];
                if (tok == kEosId) {
                    next.done = true;
                    next.reason = TerminationReason::kEos;
                    finished.push_back(std::move(next));
                } else {
                    expanded.push_back(std::move(next));
                }
            }
        }
        std::stable_sort(expanded.begin(), expanded.end(), better);
        if (static_cast<int>(expanded.size()) > beam_size) expanded.resize(beam_size);
        beam = std::move(expanded);
    }

    for (auto& h : beam) {
        h.reason = TerminationReason::kMaxLength;
        finished.push_back(h);
    }
    std::stable_sort(finished.begin(), finished.end(), better);

    GenerationResult result;
    result.tokens = finished.front().tokens;
    result.log_prob = finished.front().log_prob;
    result.terminated_by = finished.front().reason;
    return result;
}

}  // namespace defend
