#pragma once

#include <string>
#include <vector>

#include "defend/encoders.hpp"

namespace defend {

struct DecoderConfig {
    int num_layers = 2;
    int max_length = 30;  // generated tokens, BOS excluded
    int beam_size = 4;

    void validate() const {
        if (num_layers < 1) throw ConfigError("decoder: num_layers must be >= 1");
        if (max_length < 1) throw ConfigError("decoder: max_length must be >= 1");
        if (beam_size < 1) throw ConfigError("decoder: beam_size must be >= 1");
    }
};

enum class DecodeMode { kGreedy, kBeam };

enum class TerminationReason { kEos, kMaxLength };

struct GenerationResult {
    std::vector<int> tokens;  // generated ids (BOS excluded); ends with EOS
                              // iff terminated_by == kEos
    double log_prob = 0.0;
    TerminationReason terminated_by = TerminationReason::kMaxLength;
};

// Decoder parameters: projections for the conditioning prefix, token and
// position embeddings, num_layers blocks, and the output head.
ParamMap init_decoder_params(const DecoderConfig& dcfg, const EncoderConfig& ecfg,
                             Rng& rng);

// Teacher-forced pass. The conditioning is realized as a visible prefix:
// projected f_T* rows, then the projected f_G* row, then the target token
// embeddings. The causal mask covers the token region only. Returns one
// logit row per target position; row j is the distribution for target[j]
// given the prefix and targets < j.
Tensor decoder_teacher_forced(const ParamMap& params, const DecoderConfig& dcfg,
                              const EncoderConfig& ecfg, const std::vector<int>& target,
                              const Tensor& f_ts, const Tensor& f_gs);

// Optional trie constraint for closed-vocabulary decoding: each candidate
// is a token sequence; generation may only follow prefixes of candidates
// and may emit EOS exactly when a full candidate has been matched.
struct TokenTrie {
    std::vector<std::vector<int>> candidates;
    bool empty() const { return candidates.empty(); }
    // allowed next ids (sorted, deduplicated) after the emitted prefix;
    // includes kEosId when the prefix equals a complete candidate
    std::vector<int> allowed_after(const std::vector<int>& prefix) const;
};

GenerationResult generate(const ParamMap& params, const DecoderConfig& dcfg,
                          const EncoderConfig& ecfg, const Tensor& f_ts,
                          const Tensor& f_gs, DecodeMode mode,
                          const TokenTrie* constraint = nullptr);

}  // namespace defend
