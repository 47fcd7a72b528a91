#pragma once

// CTC prefix beam search with optional shallow fusion against a character
// n-gram LM (Hannun et al. style blank / non-blank bookkeeping).
//
// The search operates on a [T x V] grid of per-frame log-probabilities
// (CTC head output, blank = id 0).  Hypotheses are scored by
//
//     fused = log p_ctc(prefix) + lambda * log p_lm(prefix)
//
// where log p_lm is the running sum of per-character LM conditionals for the
// characters emitted so far (no end-of-sentence term; prefixes are open).
// With lambda = 0 (or no LM) this reduces to plain CTC prefix search and the
// top hypothesis maximises the total probability of all alignments that
// collapse to its label sequence.
//
// Determinism: prefixes live in a std::map keyed by the label sequence, so
// iteration order is lexicographic and independent of insertion order; the
// pruning sort is stable with lexicographic tie-breaking on labels.

#include <optional>
#include <string>
#include <vector>

#include "koel/ngram.hpp"
#include "koel/vocab.hpp"

namespace koel {

struct BeamConfig {
    int beam_size = 20;      // <= 0 keeps every prefix (exact search)
    double lm_lambda = 1.4;  // shallow-fusion weight; ignored when no LM
};

struct Hypothesis {
    std::vector<int> labels;          // collapsed label sequence (no blanks)
    std::string text;                 // labels rendered through the vocabulary
    std::optional<std::string> language;  // leading language tag, if any
    double log_p_ctc = 0.0;           // log sum over alignments
    double log_p_lm = 0.0;            // sum of LM conditionals (0 without LM)
    double fused = 0.0;               // log_p_ctc + lambda * log_p_lm
};

// Collapse a raw frame-label path: drop repeats, then drop blanks.
std::vector<int> collapse_ctc(const std::vector<int>& path, int blank_id = 0);

// Greedy (best path) decode of a [t x v] log-probability grid.
std::vector<int> ctc_greedy_path(const std::vector<double>& logprobs, int t, int v,
                                 int blank_id = 0);

// Beam search over a [t x v] log-probability grid (row-major, natural logs).
// `lm` and `vocab` may be null: without `vocab` no text/LM scoring happens
// (labels are reported raw); without `lm` the LM term is zero.
// `step_mass` (optional) receives, per frame, the total probability mass
// sum(exp(log_p_ctc)) over retained prefixes — with beam_size <= 0 this is
// exactly 1 up to rounding, otherwise it is <= 1.
std::vector<Hypothesis> ctc_beam_search(const std::vector<double>& logprobs, int t, int v,
                                        const NGramLM* lm, const Vocabulary* vocab,
                                        const BeamConfig& cfg,
                                        std::vector<double>* step_mass = nullptr);

}  // namespace koel
