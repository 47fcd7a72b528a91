#pragma once

// WER / CER scoring.
//
// Word error rate tokenizes on whitespace; character error rate tokenizes
// into UTF-8 codepoints with inter-word spaces kept as tokens (so a missing
// or spurious space counts as a character error).  Aggregate rates are
// micro-averaged: sum of errors over sum of reference tokens, per language
// and overall.  An empty hypothesis against a non-empty reference scores as
// all-deletions.

#include <map>
#include <string>
#include <vector>

namespace koel {

struct EditCounts {
    long long sub = 0;
    long long del = 0;
    long long ins = 0;
    long long total() const { return sub + del + ins; }
};

// Minimum-edit alignment of hyp against ref (unit costs).  The total is the
// Levenshtein distance; when several optimal alignments exist the backtrace
// prefers substitution over deletion over insertion, so the split into
// S/D/I is deterministic.
EditCounts edit_distance(const std::vector<std::string>& ref,
                         const std::vector<std::string>& hyp);

std::vector<std::string> split_words(const std::string& text);
std::vector<std::string> split_chars(const std::string& text);  // codepoints incl. spaces

struct ErrorTally {
    long long sub = 0;
    long long del = 0;
    long long ins = 0;
    long long ref_tokens = 0;
    void add(const EditCounts& e, long long ref_n);
    // errors / reference tokens; an empty reference scores 0 when the
    // hypothesis is also empty, else counts errors against a length of 1
    double rate() const;
};

struct LanguageScore {
    ErrorTally wer;
    ErrorTally cer;
    long long utts = 0;
};

struct ScoredUtterance {
    std::string utt_id;
    std::string language;  // language name ("TE"); empty allowed
    std::string ref;
    std::string hyp;
};

struct ScoreReport {
    std::map<std::string, LanguageScore> by_language;  // "" keyed as "??"
    LanguageScore overall;
    double wer() const { return overall.wer.rate(); }
    double cer() const { return overall.cer.rate(); }
    std::string table() const;    // human-readable summary
    std::string to_json() const;  // machine-readable summary
};

ScoreReport score_utterances(const std::vector<ScoredUtterance>& utts);

}  // namespace koel
