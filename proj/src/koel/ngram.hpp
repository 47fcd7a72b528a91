#pragma once

// 3-gram LM with interpolated Witten-Bell smoothing over grapheme tokens,
// used for shallow fusion during beam search.

#include <map>
#include <set>
#include <string>
#include <vector>

namespace koel {

class NGramLM {
  public:
    static constexpr const char *kSentStart = "<s>";
    static constexpr const char *kSentEnd = "</s>";
    static constexpr const char *kUnkToken = "<unk>";

    NGramLM() = default;

    // sentences are token sequences (graphemes, <space>, language labels)
    static NGramLM train(const std::vector<std::vector<std::string>> &sentences, int order = 3);

    int order() const { return order_; }
    // predicted tokens: seen tokens + </s> + <unk>, sorted (no <s>)
    const std::vector<std::string> &vocab() const { return vocab_; }

    // log P(token | last order-1 tokens of history), left-padded with <s>.
    // Tokens outside the vocabulary are mapped to <unk>.
    double step(const std::vector<std::string> &history, const std::string &token) const;

    // sum of stepwise conditionals over the sequence plus the end marker
    double score(const std::vector<std::string> &tokens) const;

    // plain-text table: order<TAB>history<TAB>token<TAB>logprob<TAB>backoff,
    // probabilities in hexfloat so load() round-trips exactly
    void save(const std::string &path) const;
    static NGramLM load(const std::string &path);

  private:
    struct HistEntry {
        double log_bow = 0.0;                  // log of the Witten-Bell backoff weight
        std::map<std::string, double> log_p;   // token -> log P(token | history)
    };

    double step_mapped(const std::vector<std::string> &padded_tail,
                       const std::string &token) const;

    int order_ = 3;
    std::vector<std::string> vocab_;
    std::set<std::string> vocab_set_;  // fast membership for <unk> mapping
    // tables_[len]: histories of exactly `len` tokens (space-joined key)
    std::vector<std::map<std::string, HistEntry>> tables_;
};

} // namespace koel
