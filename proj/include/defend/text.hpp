#pragma once

#include <map>
#include <string>
#include <vector>

#include "defend/common.hpp"

namespace defend {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;

// Lowercase word-level vocabulary over a closed corpus. Ids 0-3 are
// reserved (PAD, UNK, BOS, EOS); the rest are ordered by descending
// frequency, ties broken lexicographically, so builds are deterministic.
class Vocab {
  public:
    Vocab();

    static Vocab build(const std::vector<std::string>& corpus, int min_freq = 1);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int token_id(const std::string& token) const;  // kUnkId when absent
    const std::string& token(int id) const;
    const std::vector<std::string>& tokens() const { return id_to_token_; }

    static Vocab from_tokens(const std::vector<std::string>& id_to_token);

  private:
    std::vector<std::string> id_to_token_;
    std::map<std::string, int> token_to_id_;
};

std::vector<std::string> split_words(const std::string& text);  // lowercased

// BOS + word ids (UNK fallback) + EOS, padded or truncated to max_len.
// Truncation keeps EOS as the last non-pad token. Sets *truncated when the
// text did not fit (the caller may log a warning record).
std::vector<int> tokenize(const std::string& text, const Vocab& vocab, int max_len,
                          bool* truncated = nullptr);

// Same encoding without padding (length = min(needed, max_len)).
std::vector<int> tokenize_unpadded(const std::string& text, const Vocab& vocab,
                                   int max_len, bool* truncated = nullptr);

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab);

}  // namespace defend
