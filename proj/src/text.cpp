#include "defend/text.hpp"

#include <algorithm>
#include <cctype>

namespace defend {

Vocab::Vocab() {
    id_to_token_ = {"<pad>", "<unk>", "<bos>", "<eos>"};
    for (int i = 0; i < 4; ++i) token_to_id_[id_to_token_[i]] = i;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string current;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!current.empty()) {
                words.push_back(current);
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!current.empty()) words.push_back(current);
    return words;
}

Vocab Vocab::build(const std::vector<std::string>& corpus, int min_freq) {
    if (corpus.empty()) throw ContractError("Vocab::build: empty corpus");
    std::map<std::string, int> freq;
    for (const auto& text : corpus)
        for (const auto& w : split_words(text)) ++freq[w];

    std::vector<std::pair<std::string, int>> entries(freq.begin(), freq.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab v;
    for (const auto& [word, count] : entries) {
        if (count < min_freq) continue;
        v.token_to_id_[word] = static_cast<int>(v.id_to_token_.size());
        v.id_to_token_.push_back(word);
    }
    return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& id_to_token) {
    if (id_to_token.size() < 4) throw DataError("Vocab::from_tokens: missing reserved ids");
    Vocab v;
    v.id_to_token_ = id_to_token;
    v.token_to_id_.clear();
    for (std::size_t i = 0; i < id_to_token.size(); ++i)
        v.token_to_id_[id_to_token[i]] = static_cast<int>(i);
    return v;
}

int Vocab::token_id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw ContractError("Vocab::token: id out of range");
    return id_to_token_[id];
}

std::vector<int> tokenize_unpadded(const std::string& text, const Vocab& vocab,
                                   int max_len, bool* truncated) {
    if (max_len < 2) throw ContractError("tokenize: max_len must be at least 2");
    if (truncated) *truncated = false;
    std::vector<int> ids{kBosId};
    for (const auto& w : split_words(text)) ids.push_back(vocab.token_id(w));
    ids.push_back(kEosId);
    if (static_cast<int>(ids.size()) > max_len) {
        ids.resize(max_len);
        ids.back() = kEosId;
        if (truncated) *truncated = true;
    }
    return ids;
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab, int max_len,
                          bool* truncated) {
    auto ids = tokenize_unpadded(text, vocab, max_len, truncated);
    while (static_cast<int>(ids.size()) < max_len) ids.push_back(kPadId);
    return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == kPadId || id == kBosId || id == kEosId) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(id);
    }
    return out;
}

}  // namespace defend
