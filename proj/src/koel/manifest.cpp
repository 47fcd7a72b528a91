#include "koel/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "koel/common.hpp"
#include "koel/vocab.hpp"

namespace koel {

std::vector<UtteranceMeta> read_manifest(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "cannot open manifest ", path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    const std::vector<std::string>& langs = language_names();

    std::vector<UtteranceMeta> out;
    std::set<std::string> seen_ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            fail(path, ":", lineno, ": bad JSON: ", e.what());
        }
        UtteranceMeta u;
        try {
            u.utt_id = j.at("utt_id").get<std::string>();
            u.audio_path = j.at("audio_path").get<std::string>();
            u.transcript = j.at("transcript").get<std::string>();
            u.phonemes = j.value("phonemes", std::string());
            u.language = j.at("language").get<std::string>();
            u.sample_rate = j.at("sample_rate").get<int>();
        } catch (const std::exception& e) {
            fail(path, ":", lineno, ": missing/bad field: ", e.what());
        }
        check(!u.utt_id.empty(), path, ":", lineno, ": empty utt_id");
        check(seen_ids.insert(u.utt_id).second, path, ":", lineno, ": duplicate utt_id ",
              u.utt_id);
        check(!u.audio_path.empty(), path, ":", lineno, ": empty audio_path");
        check(!u.transcript.empty(), path, ":", lineno, ": empty transcript");
        check(u.sample_rate > 0, path, ":", lineno, ": bad sample_rate ", u.sample_rate);
        check(std::find(langs.begin(), langs.end(), u.language) != langs.end(), path, ":",
              lineno, ": unknown language '", u.language, "'");
        const std::filesystem::path ap(u.audio_path);
        if (ap.is_relative()) u.audio_path = (base / ap).string();
        out.push_back(std::move(u));
    }
    check(!out.empty(), "manifest ", path, " is empty");
    return out;
}

void write_manifest(const std::string& path, const std::vector<UtteranceMeta>& utts) {
    std::ofstream out(path);
    check(out.good(), "cannot write manifest ", path);
    for (const auto& u : utts) {
        const nlohmann::json j = {{"utt_id", u.utt_id},          {"audio_path", u.audio_path},
                                  {"transcript", u.transcript},  {"phonemes", u.phonemes},
                                  {"language", u.language},      {"sample_rate", u.sample_rate}};
        out << j.dump() << "\n";
    }
    check(out.good(), "error writing manifest ", path);
}

}  // namespace koel
