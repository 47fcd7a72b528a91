#include "koel/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "koel/audio.hpp"
#include "koel/common.hpp"
#include "koel/vocab.hpp"

namespace koel {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBaseHz = 400.0;
constexpr double kStepHz = 170.0;

void validate(const SynthSpec &spec) {
    check(!spec.languages.empty(), "synth: no languages given");
    std::set<std::string> names;
    for (const SynthLanguage &lang : spec.languages) {
        language_index(lang.name);  // throws on unknown names
        check(names.insert(lang.name).second, "synth: duplicate language ", lang.name);
        check(!lang.alphabet.empty(), "synth: empty alphabet for ", lang.name);
        std::set<char> chars(lang.alphabet.begin(), lang.alphabet.end());
        check(chars.size() == lang.alphabet.size(), "synth: repeated grapheme in alphabet '",
              lang.alphabet, "'");
        for (char c : lang.alphabet)
            check(c > ' ' && static_cast<unsigned char>(c) < 127,
                  "synth: alphabet must be printable ASCII, got byte ", static_cast<int>(c));
        check(lang.sample_rate >= 4000, "synth: sample rate ", lang.sample_rate, " too low");
    }
    if (spec.require_disjoint) {
        std::map<char, std::string> owner;
        for (const SynthLanguage &lang : spec.languages)
            for (char c : lang.alphabet) {
                auto [it, fresh] = owner.emplace(c, lang.name);
                check(fresh, "synth: grapheme '", std::string(1, c), "' appears in both ",
                      it->second, " and ", lang.name);
            }
    }
    check(spec.utterances_per_language > 0, "synth: utterance count must be positive");
    check(spec.min_words >= 1 && spec.max_words >= spec.min_words, "synth: bad word counts");
    check(spec.min_word_len >= 1 && spec.max_word_len >= spec.min_word_len,
          "synth: bad word lengths");
    check(spec.tone_sec > 0 && spec.gap_sec >= 0 && spec.space_sec >= 0 && spec.edge_sec >= 0,
          "synth: durations must be non-negative (tone positive)");
}

void append_silence(std::vector<float> &out, double sec, int rate) {
    out.insert(out.end(), static_cast<size_t>(std::llround(sec * rate)), 0.0f);
}

void append_tone(std::vector<float> &out, double hz, double sec, int rate) {
    const int n = static_cast<int>(std::llround(sec * rate));
    const int ramp = std::min(n / 4, static_cast<int>(std::llround(0.010 * rate)));
    for (int i = 0; i < n; ++i) {
        double env = 1.0;
        if (i < ramp) env = static_cast<double>(i) / ramp;
        if (n - 1 - i < ramp) env = std::min(env, static_cast<double>(n - 1 - i) / ramp);
        out.push_back(static_cast<float>(0.5 * env * std::sin(2.0 * kPi * hz * i / rate)));
    }
}

Waveform render(const std::string &transcript, const std::map<char, double> &tones,
                const SynthSpec &spec, int rate) {
    Waveform w;
    w.sample_rate = rate;
    append_silence(w.samples, spec.edge_sec, rate);
    bool first = true;
    for (char c : transcript) {
        if (c == ' ') {
            append_silence(w.samples, spec.space_sec, rate);
            first = true;
            continue;
        }
        if (!first) append_silence(w.samples, spec.gap_sec, rate);
        append_tone(w.samples, tones.at(c), spec.tone_sec, rate);
        first = false;
    }
    append_silence(w.samples, spec.edge_sec, rate);
    return w;
}

// the alphabet chopped into words of max_word_len, e.g. "abcde"/3 -> "abc de"
std::string coverage_transcript(const std::string &alphabet, int max_word_len) {
    std::string out;
    for (size_t i = 0; i < alphabet.size(); ++i) {
        if (i > 0 && i % static_cast<size_t>(max_word_len) == 0) out += ' ';
        out += alphabet[i];
    }
    return out;
}

}  // namespace

std::map<char, double> synth_tone_table(const SynthSpec &spec) {
    validate(spec);
    std::set<char> all;
    int min_rate = spec.languages.front().sample_rate;
    for (const SynthLanguage &lang : spec.languages) {
        all.insert(lang.alphabet.begin(), lang.alphabet.end());
        min_rate = std::min(min_rate, lang.sample_rate);
    }
    std::map<char, double> tones;
    int i = 0;
    for (char c : all) tones[c] = kBaseHz + kStepHz * i++;
    const double top = kBaseHz + kStepHz * (static_cast<int>(all.size()) - 1);
    check(top < 0.45 * min_rate, "synth: ", all.size(), " graphemes need tones up to ", top,
          " Hz, above the usable band of a ", min_rate, " Hz language");
    return tones;
}

std::string synth_phonemes(const std::string &transcript) {
    std::ostringstream out;
    bool first = true;
    for (char c : transcript) {
        if (!first) out << ' ';
        if (c == ' ')
            out << "<space>";
        else
            out << static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        first = false;
    }
    return out.str();
}

std::vector<UtteranceMeta> generate_synthetic_dataset(const SynthSpec &spec,
                                                      const std::string &out_dir) {
    const std::map<char, double> tones = synth_tone_table(spec);  // validates
    std::filesystem::create_directories(out_dir);

    Rng rng(spec.seed);
    std::vector<UtteranceMeta> rows;
    for (const SynthLanguage &lang : spec.languages) {
        for (int u = 0; u < spec.utterances_per_language; ++u) {
            std::string transcript;
            if (u == 0) {
                transcript = coverage_transcript(lang.alphabet, spec.max_word_len);
            } else {
                const int words =
                    spec.min_words + rng.uniform_int(spec.max_words - spec.min_words + 1);
                for (int wi = 0; wi < words; ++wi) {
                    if (wi > 0) transcript += ' ';
                    const int len = spec.min_word_len +
                                    rng.uniform_int(spec.max_word_len - spec.min_word_len + 1);
                    for (int k = 0; k < len; ++k)
                        transcript +=
                            lang.alphabet[static_cast<size_t>(rng.uniform_int(
                                static_cast<int>(lang.alphabet.size())))];
                }
            }

            std::ostringstream id;
            id << lang.name << "_";
            id.fill('0');
            id.width(4);
            id << u;

            UtteranceMeta meta;
            meta.utt_id = id.str();
            meta.audio_path = meta.utt_id + ".wav";
            meta.transcript = transcript;
            meta.phonemes = synth_phonemes(transcript);
            meta.language = lang.name;
            meta.sample_rate = lang.sample_rate;

            Waveform w = render(transcript, tones, spec, lang.sample_rate);
            write_wav((std::filesystem::path(out_dir) / meta.audio_path).string(), w);
            rows.push_back(std::move(meta));
        }
    }
    return rows;
}

}  // namespace koel
