#include "koel/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "koel/common.hpp"

namespace koel {

namespace {

const char *kUnk = "<unk>";
const char *kBlank = "<blank>";
const char *kSpace = "<space>";
const char *kSosEos = "<sos/eos>";

} // namespace

const std::vector<std::string> &language_labels() {
    static const std::vector<std::string> labels = {"[TE]", "[TA]", "[GU]",
                                                    "[MA]", "[HI]", "[OD]"};
    return labels;
}

const std::vector<std::string> &language_names() {
    static const std::vector<std::string> names = {"TE", "TA", "GU", "MA", "HI", "OD"};
    return names;
}

int language_index(const std::string &name) {
    const auto &names = language_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    fail("unknown language '", name, "' (expected one of TE TA GU MA HI OD)");
}

std::vector<std::string> utf8_codepoints(const std::string &text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        size_t len = 0;
        if (c < 0x80)
            len = 1;
        else if ((c & 0xe0) == 0xc0)
            len = 2;
        else if ((c & 0xf0) == 0xe0)
            len = 3;
        else if ((c & 0xf8) == 0xf0)
            len = 4;
        else
            fail("malformed UTF-8 at byte ", i);
        check(i + len <= text.size(), "truncated UTF-8 sequence at byte ", i);
        for (size_t j = 1; j < len; ++j)
            check((static_cast<unsigned char>(text[i + j]) & 0xc0) == 0x80,
                  "malformed UTF-8 continuation at byte ", i + j);
        out.push_back(text.substr(i, len));
        i += len;
    }
    return out;
}

int Vocabulary::id(const std::string &symbol) const {
    const auto it = ids.find(symbol);
    check(it != ids.end(), "symbol '", symbol, "' not in vocabulary");
    return it->second;
}

int Vocabulary::id_or_unk(const std::string &symbol) const {
    const auto it = ids.find(symbol);
    return it != ids.end() ? it->second : unk_id;
}

const std::string &Vocabulary::symbol(int id) const {
    check(id >= 0 && id < size(), "vocabulary id ", id, " out of range [0, ", size(), ")");
    return symbols[static_cast<size_t>(id)];
}

bool Vocabulary::is_language_id(int id) const {
    for (const auto &[label, lid] : language_ids)
        if (lid == id) return true;
    return false;
}

namespace {

Vocabulary finalize(Vocabulary v) {
    for (size_t i = 0; i < v.symbols.size(); ++i) {
        const auto [it, fresh] = v.ids.emplace(v.symbols[i], static_cast<int>(i));
        check(fresh, "duplicate symbol '", v.symbols[i], "' in vocabulary");
    }
    v.blank_id = v.id(kBlank);
    check(v.blank_id == 0, "blank must have id 0");
    v.unk_id = v.id(kUnk);
    v.space_id = v.id(kSpace);
    v.sos_eos_id = v.id(kSosEos);
    if (v.kind == Vocabulary::Kind::grapheme)
        for (const auto &label : language_labels()) v.language_ids[label] = v.id(label);
    return v;
}

} // namespace

Vocabulary build_grapheme_vocab(const std::map<std::string, std::vector<std::string>> &corpora) {
    check(!corpora.empty(), "build_grapheme_vocab: empty corpora");
    std::set<std::string> chars;
    bool any_text = false;
    for (const auto &[lang, texts] : corpora) {
        language_index(lang);  // validates the label
        for (const auto &text : texts) {
            any_text = true;
            for (auto &cp : utf8_codepoints(text))
                if (cp != " ") chars.insert(std::move(cp));
        }
    }
    check(any_text, "build_grapheme_vocab: corpora contain no transcripts");

    Vocabulary v;
    v.kind = Vocabulary::Kind::grapheme;
    v.symbols.push_back(kBlank);
    v.symbols.insert(v.symbols.end(), chars.begin(), chars.end());  // codepoint-sorted via set
    v.symbols.push_back(kUnk);
    v.symbols.push_back(kSpace);
    v.symbols.push_back(kSosEos);
    for (const auto &label : language_labels()) v.symbols.push_back(label);
    return finalize(std::move(v));
}

Vocabulary build_phoneme_vocab(const std::vector<std::string> &phonemes) {
    check(!phonemes.empty(), "build_phoneme_vocab: empty phoneme set");
    std::set<std::string> sorted;
    for (const auto &p : phonemes) {
        check(!p.empty(), "build_phoneme_vocab: empty symbol");
        check(sorted.insert(p).second, "build_phoneme_vocab: duplicate symbol '", p, "'");
    }
    Vocabulary v;
    v.kind = Vocabulary::Kind::phoneme;
    v.symbols.push_back(kBlank);
    v.symbols.insert(v.symbols.end(), sorted.begin(), sorted.end());
    v.symbols.push_back(kUnk);
    v.symbols.push_back(kSpace);
    v.symbols.push_back(kSosEos);
    return finalize(std::move(v));
}

void Vocabulary::save(const std::string &path) const {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "cannot write vocabulary: ", path);
    for (const auto &s : symbols) os << s << '\n';
    check(os.good(), "short write to vocabulary: ", path);
}

Vocabulary Vocabulary::load(const std::string &path, Kind kind) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "cannot open vocabulary: ", path);
    Vocabulary v;
    v.kind = kind;
    std::string line;
    while (std::getline(is, line)) v.symbols.push_back(line);
    check(!v.symbols.empty(), "empty vocabulary file: ", path);
    return finalize(std::move(v));
}

TargetEncoding encode_target(const std::string &transcript, const std::string &phonemes,
                             const std::string &language, const Vocabulary &graphemes,
                             const Vocabulary &phoneme_vocab) {
    check(graphemes.kind == Vocabulary::Kind::grapheme, "encode_target: wrong grapheme vocab kind");
    check(phoneme_vocab.kind == Vocabulary::Kind::phoneme, "encode_target: wrong phoneme vocab kind");
    TargetEncoding enc;
    enc.language = language;
    enc.language_idx = language_index(language);
    const std::string &label = language_labels()[static_cast<size_t>(enc.language_idx)];

    enc.ctc_labels.push_back(graphemes.id(label));
    for (const auto &cp : utf8_codepoints(transcript))
        enc.ctc_labels.push_back(cp == " " ? graphemes.space_id : graphemes.id_or_unk(cp));

    enc.attn_in.push_back(graphemes.sos_eos_id);
    enc.attn_in.insert(enc.attn_in.end(), enc.ctc_labels.begin(), enc.ctc_labels.end());
    enc.attn_out = enc.ctc_labels;
    enc.attn_out.push_back(graphemes.sos_eos_id);

    std::istringstream ps(phonemes);
    std::string tok;
    while (ps >> tok)
        enc.phoneme_labels.push_back(tok == "<space>" ? phoneme_vocab.space_id
                                                      : phoneme_vocab.id_or_unk(tok));
    enc.phn_in.push_back(phoneme_vocab.sos_eos_id);
    enc.phn_in.insert(enc.phn_in.end(), enc.phoneme_labels.begin(), enc.phoneme_labels.end());
    enc.phn_out = enc.phoneme_labels;
    enc.phn_out.push_back(phoneme_vocab.sos_eos_id);
    return enc;
}

DecodedLabels decode_labels(const std::vector<int> &ids, const Vocabulary &vocab) {
    DecodedLabels out;
    size_t start = 0;
    if (!ids.empty() && vocab.is_language_id(ids[0])) {
        const std::string &label = vocab.symbol(ids[0]);
        for (size_t i = 0; i < language_labels().size(); ++i)
            if (language_labels()[i] == label) out.language = language_names()[i];
        start = 1;
    }
    for (size_t i = start; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id == vocab.blank_id || id == vocab.unk_id || id == vocab.sos_eos_id ||
            vocab.is_language_id(id))
            continue;
        if (id == vocab.space_id)
            out.text += ' ';
        else
            out.text += vocab.symbol(id);
    }
    return out;
}

} // namespace koel
