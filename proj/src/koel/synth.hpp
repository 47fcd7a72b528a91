#pragma once

// Synthetic dataset generation: each grapheme is a fixed pure tone, words are
// tone runs separated by short gaps, spaces are longer silences.  Languages
// use disjoint alphabets (and may use different sample rates), so both the
// transcripts and the language identity are learnable from the audio alone.

#include <map>
#include <string>
#include <vector>

#include "koel/manifest.hpp"

namespace koel {

struct SynthLanguage {
    std::string name;      // one of language_names() (TE, TA, ...)
    std::string alphabet;  // distinct ASCII letters
    int sample_rate = 16000;
};

struct SynthSpec {
    std::vector<SynthLanguage> languages;
    int utterances_per_language = 25;
    int min_words = 2, max_words = 4;
    int min_word_len = 1, max_word_len = 3;
    bool require_disjoint = true;
    double tone_sec = 0.14;   // per-grapheme tone length
    double gap_sec = 0.02;    // silence between graphemes in a word
    double space_sec = 0.06;  // silence for a word boundary
    double edge_sec = 0.05;   // leading/trailing silence
    uint64_t seed = 1;
};

// grapheme -> tone frequency in Hz, shared across languages; deterministic
// (sorted grapheme order), all below the Nyquist rate of every language
std::map<char, double> synth_tone_table(const SynthSpec &spec);

// identity-like phoneme transcript: letter 'a' -> token "A", space -> <space>
std::string synth_phonemes(const std::string &transcript);

// Writes <utt_id>.wav files under out_dir and returns the manifest rows with
// audio paths relative to out_dir.  Same spec (incl. seed) -> byte-identical
// WAVs and rows.  First utterance of each language spells out the alphabet so
// every grapheme is covered.
std::vector<UtteranceMeta> generate_synthetic_dataset(const SynthSpec &spec,
                                                      const std::string &out_dir);

}  // namespace koel
