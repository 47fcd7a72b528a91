#include "koel/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "koel/common.hpp"

namespace koel {

namespace {

std::string join_tokens(const std::vector<std::string> &tokens, size_t begin, size_t end) {
    std::string out;
    for (size_t i = begin; i < end; ++i) {
        if (i > begin) out += ' ';
        out += tokens[i];
    }
    return out;
}

std::vector<std::string> split_tokens(const std::string &s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::string hexfloat(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

} // namespace

NGramLM NGramLM::train(const std::vector<std::vector<std::string>> &sentences, int order) {
    check(order >= 1 && order <= 5, "NGramLM: order must be in [1, 5], got ", order);
    check(!sentences.empty(), "NGramLM: empty corpus");

    struct Counts {
        int64_t total = 0;
        std::map<std::string, int64_t> tokens;
    };
    // raw counts per history length; every prediction event contributes one
    // count at each order 1..order
    std::vector<std::map<std::string, Counts>> counts(static_cast<size_t>(order));
    bool any_token = false;
    for (const auto &sent : sentences) {
        std::vector<std::string> padded(static_cast<size_t>(order - 1), kSentStart);
        for (const auto &tok : sent) {
            check(!tok.empty() && tok.find(' ') == std::string::npos &&
                      tok.find('\t') == std::string::npos,
                  "NGramLM: token '", tok, "' must be non-empty without whitespace");
            check(tok != kSentStart, "NGramLM: '<s>' cannot appear inside a sentence");
            padded.push_back(tok);
        }
        padded.push_back(kSentEnd);
        any_token = true;
        for (size_t i = static_cast<size_t>(order - 1); i < padded.size(); ++i)
            for (int len = 0; len < order; ++len) {
                auto &c = counts[static_cast<size_t>(len)]
                                [join_tokens(padded, i - static_cast<size_t>(len), i)];
                ++c.total;
                ++c.tokens[padded[i]];
            }
    }
    check(any_token, "NGramLM: corpus has no sentences");

    NGramLM lm;
    lm.order_ = order;
    // predicted vocabulary: every unigram target plus <unk>
    std::set<std::string> vocab_set;
    for (const auto &[tok, n] : counts[0].at("").tokens) vocab_set.insert(tok);
    vocab_set.insert(kUnkToken);
    lm.vocab_.assign(vocab_set.begin(), vocab_set.end());
    lm.vocab_set_ = vocab_set;
    const double v_size = static_cast<double>(lm.vocab_.size());

    lm.tables_.resize(static_cast<size_t>(order));
    // build level by level so each level can interpolate with the one below
    for (int len = 0; len < order; ++len) {
        for (const auto &[hist, c] : counts[static_cast<size_t>(len)]) {
            const double t_distinct = static_cast<double>(c.tokens.size());
            const double denom = static_cast<double>(c.total) + t_distinct;
            HistEntry entry;
            entry.log_bow = std::log(t_distinct / denom);
            if (len == 0) {
                // unigrams are stored for the whole vocabulary; base is uniform
                for (const auto &w : lm.vocab_) {
                    const auto it = c.tokens.find(w);
                    const double cw = it == c.tokens.end() ? 0.0 : static_cast<double>(it->second);
                    entry.log_p[w] = std::log((cw + t_distinct / v_size) / denom);
                }
            } else {
                const auto hist_tokens = split_tokens(hist);
                for (const auto &[w, cw] : c.tokens) {
                    const double lower = lm.step_mapped(
                        std::vector<std::string>(hist_tokens.begin() + 1, hist_tokens.end()), w);
                    entry.log_p[w] =
                        std::log((static_cast<double>(cw) + t_distinct * std::exp(lower)) / denom);
                }
            }
            lm.tables_[static_cast<size_t>(len)][hist] = std::move(entry);
        }
    }
    return lm;
}

double NGramLM::step_mapped(const std::vector<std::string> &padded_tail,
                            const std::string &token) const {
    // padded_tail has at most order-1 tokens; walk down the orders
    double bow_acc = 0.0;
    for (size_t len = padded_tail.size();; --len) {
        const std::string hist = join_tokens(padded_tail, padded_tail.size() - len,
                                             padded_tail.size());
        const auto ht = tables_[len].find(hist);
        if (ht != tables_[len].end()) {
            const auto pt = ht->second.log_p.find(token);
            if (pt != ht->second.log_p.end()) return bow_acc + pt->second;
            bow_acc += ht->second.log_bow;
        }
        if (len == 0) break;
    }
    fail("NGramLM: token '", token, "' missing from the unigram table");
}

double NGramLM::step(const std::vector<std::string> &history, const std::string &token) const {
    check(!tables_.empty(), "NGramLM: model is empty");
    std::vector<std::string> tail(static_cast<size_t>(order_ - 1), kSentStart);
    const size_t have = std::min(history.size(), static_cast<size_t>(order_ - 1));
    for (size_t i = 0; i < have; ++i) {
        const std::string &h = history[history.size() - have + i];
        tail[tail.size() - have + i] = vocab_set_.count(h) || h == kSentStart ? h : kUnkToken;
    }
    const std::string mapped = vocab_set_.count(token) ? token : kUnkToken;
    return step_mapped(tail, mapped);
}

double NGramLM::score(const std::vector<std::string> &tokens) const {
    double total = 0.0;
    std::vector<std::string> history;
    for (const auto &tok : tokens) {
        total += step(history, tok);
        history.push_back(tok);
    }
    total += step(history, kSentEnd);
    return total;
}

void NGramLM::save(const std::string &path) const {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "cannot write LM: ", path);
    for (size_t len = 0; len < tables_.size(); ++len)
        for (const auto &[hist, entry] : tables_[len])
            for (const auto &[tok, lp] : entry.log_p)
                os << (len + 1) << '\t' << hist << '\t' << tok << '\t' << hexfloat(lp) << '\t'
                   << hexfloat(entry.log_bow) << '\n';
    check(os.good(), "short write to LM: ", path);
}

NGramLM NGramLM::load(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "cannot open LM: ", path);
    NGramLM lm;
    lm.order_ = 1;
    lm.tables_.clear();
    std::string line;
    size_t line_no = 0;
    std::set<std::string> vocab_set;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t start = 0;
        for (size_t i = 0; i <= line.size(); ++i)
            if (i == line.size() || line[i] == '\t') {
                fields.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        check(fields.size() == 5, "LM ", path, " line ", line_no, ": expected 5 fields, got ",
              fields.size());
        const int ord = std::stoi(fields[0]);
        check(ord >= 1 && ord <= 5, "LM ", path, " line ", line_no, ": bad order ", ord);
        lm.order_ = std::max(lm.order_, ord);
        if (static_cast<size_t>(ord) > lm.tables_.size()) lm.tables_.resize(static_cast<size_t>(ord));
        auto &entry = lm.tables_[static_cast<size_t>(ord - 1)][fields[1]];
        entry.log_p[fields[2]] = std::strtod(fields[3].c_str(), nullptr);
        entry.log_bow = std::strtod(fields[4].c_str(), nullptr);
        if (ord == 1) vocab_set.insert(fields[2]);
    }
    check(!lm.tables_.empty() && !lm.tables_[0].empty(), "LM ", path, " has no unigrams");
    lm.vocab_.assign(vocab_set.begin(), vocab_set.end());
    lm.vocab_set_ = std::move(vocab_set);
    return lm;
}

} // namespace koel
