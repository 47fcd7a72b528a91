#pragma once

// Phoneme inventory and language-label-augmented grapheme vocabulary;
// target encoding for CTC, GRP-DEC and PHN-DEC.

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace koel {

// fixed canonical order; LID class index = position in this list
const std::vector<std::string> &language_labels();  // [TE] [TA] [GU] [MA] [HI] [OD]
const std::vector<std::string> &language_names();   // TE TA GU MA HI OD
int language_index(const std::string &name);        // 0..5, error if unknown

// splits UTF-8 text into codepoint strings; malformed input -> error
std::vector<std::string> utf8_codepoints(const std::string &text);

struct Vocabulary {
    enum class Kind { grapheme, phoneme };
    Kind kind = Kind::grapheme;
    std::vector<std::string> symbols;  // id -> symbol, blank always id 0
    std::unordered_map<std::string, int> ids;
    int blank_id = 0;
    int unk_id = -1;
    int space_id = -1;
    int sos_eos_id = -1;
    std::unordered_map<std::string, int> language_ids;  // label -> id (grapheme kind only)

    int size() const { return static_cast<int>(symbols.size()); }
    int id(const std::string &symbol) const;         // error when missing
    int id_or_unk(const std::string &symbol) const;
    const std::string &symbol(int id) const;         // error when out of range
    bool is_language_id(int id) const;

    void save(const std::string &path) const;  // one symbol per line, line = id
    static Vocabulary load(const std::string &path, Kind kind);
};

// union of codepoints across all transcripts (space -> <space>), sorted by
// codepoint; blank forced to id 0; then <unk>, <space>, <sos/eos>, then the
// 6 language labels. corpora: language name -> transcripts.
Vocabulary build_grapheme_vocab(const std::map<std::string, std::vector<std::string>> &corpora);

// sorted phoneme symbols + the 4 specials; duplicates -> error
Vocabulary build_phoneme_vocab(const std::vector<std::string> &phonemes);

struct TargetEncoding {
    std::vector<int> ctc_labels;      // language label, then graphemes (no sos/eos)
    std::vector<int> attn_in;         // sos + ctc_labels
    std::vector<int> attn_out;        // ctc_labels + eos
    std::vector<int> phoneme_labels;  // bare phoneme ids (no language)
    std::vector<int> phn_in;          // sos + phoneme_labels
    std::vector<int> phn_out;         // phoneme_labels + eos
    std::string language;
    int language_idx = -1;            // 0..5
};

// phonemes: whitespace-separated phoneme tokens; unknown symbols map to unk
TargetEncoding encode_target(const std::string &transcript, const std::string &phonemes,
                             const std::string &language, const Vocabulary &graphemes,
                             const Vocabulary &phoneme_vocab);

struct DecodedLabels {
    std::optional<std::string> language;  // language name (TE..OD) when ids led with a label
    std::string text;
};

// strips a leading language label, drops specials, maps <space> back to " "
DecodedLabels decode_labels(const std::vector<int> &ids, const Vocabulary &vocab);

} // namespace koel
