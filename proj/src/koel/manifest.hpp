#pragma once

// Dataset manifests: one JSON object per line with the fields
//   utt_id, audio_path, transcript, phonemes, language, sample_rate
// `audio_path` may be relative, in which case it is resolved against the
// directory containing the manifest file on load.

#include <string>
#include <vector>

namespace koel {

struct UtteranceMeta {
    std::string utt_id;
    std::string audio_path;
    std::string transcript;  // grapheme string
    std::string phonemes;    // space-separated phoneme tokens ("<space>" between words)
    std::string language;    // language name, e.g. "TE"
    int sample_rate = 16000;
};

std::vector<UtteranceMeta> read_manifest(const std::string& path);

// Writes audio paths exactly as given (keep them relative for portability).
void write_manifest(const std::string& path, const std::vector<UtteranceMeta>& utts);

}  // namespace koel
