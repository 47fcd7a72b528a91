#include "koel/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "koel/common.hpp"
#include "koel/vocab.hpp"

namespace koel {

EditCounts edit_distance(const std::vector<std::string>& ref,
                         const std::vector<std::string>& hyp) {
    const size_t r = ref.size();
    const size_t h = hyp.size();
    // d[i][j] = distance between ref[0..i) and hyp[0..j)
    std::vector<std::vector<int>> d(r + 1, std::vector<int>(h + 1, 0));
    for (size_t i = 0; i <= r; ++i) d[i][0] = static_cast<int>(i);
    for (size_t j = 0; j <= h; ++j) d[0][j] = static_cast<int>(j);
    for (size_t i = 1; i <= r; ++i) {
        for (size_t j = 1; j <= h; ++j) {
            const int match = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            d[i][j] = std::min({match, d[i - 1][j] + 1, d[i][j - 1] + 1});
        }
    }
    EditCounts out;
    size_t i = r, j = h;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && d[i][j] == d[i - 1][j - 1]) {
            --i, --j;
        } else if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1) {
            ++out.sub;
            --i, --j;
        } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
            ++out.del;
            --i;
        } else {
            ++out.ins;
            --j;
        }
    }
    return out;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::vector<std::string> split_chars(const std::string& text) {
    return utf8_codepoints(text);
}

void ErrorTally::add(const EditCounts& e, long long ref_n) {
    sub += e.sub;
    del += e.del;
    ins += e.ins;
    ref_tokens += ref_n;
}

double ErrorTally::rate() const {
    const long long errors = sub + del + ins;
    if (ref_tokens <= 0) return errors > 0 ? static_cast<double>(errors) : 0.0;
    return static_cast<double>(errors) / static_cast<double>(ref_tokens);
}

ScoreReport score_utterances(const std::vector<ScoredUtterance>& utts) {
    ScoreReport rep;
    for (const auto& u : utts) {
        const std::string key = u.language.empty() ? "??" : u.language;
        const EditCounts w = edit_distance(split_words(u.ref), split_words(u.hyp));
        const EditCounts c = edit_distance(split_chars(u.ref), split_chars(u.hyp));
        const long long ref_w = static_cast<long long>(split_words(u.ref).size());
        const long long ref_c = static_cast<long long>(split_chars(u.ref).size());
        for (LanguageScore* s : {&rep.by_language[key], &rep.overall}) {
            s->wer.add(w, ref_w);
            s->cer.add(c, ref_c);
            s->utts += 1;
        }
    }
    return rep;
}

namespace {

void format_row(std::string& out, const std::string& name, const LanguageScore& s) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "%-8s %6lld %8.2f %8.2f   (S=%lld D=%lld I=%lld / %lld ref words)\n",
                  name.c_str(), s.utts, 100.0 * s.wer.rate(), 100.0 * s.cer.rate(),
                  s.wer.sub, s.wer.del, s.wer.ins, s.wer.ref_tokens);
    out += buf;
}

nlohmann::json tally_json(const ErrorTally& t) {
    return {{"sub", t.sub},
            {"del", t.del},
            {"ins", t.ins},
            {"ref_tokens", t.ref_tokens},
            {"rate", t.rate()}};
}

}  // namespace

std::string ScoreReport::table() const {
    std::string out;
    out += "language   utts    WER%     CER%\n";
    for (const auto& [name, s] : by_language) format_row(out, name, s);
    format_row(out, "ALL", overall);
    return out;
}

std::string ScoreReport::to_json() const {
    nlohmann::json j;
    for (const auto& [name, s] : by_language) {
        j["by_language"][name] = {
            {"utts", s.utts}, {"wer", tally_json(s.wer)}, {"cer", tally_json(s.cer)}};
    }
    j["overall"] = {{"utts", overall.utts},
                    {"wer", tally_json(overall.wer)},
                    {"cer", tally_json(overall.cer)}};
    return j.dump(2);
}

}  // namespace koel
