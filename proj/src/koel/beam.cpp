#include "koel/beam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

#include "koel/common.hpp"

namespace koel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double hi = a > b ? a : b;
    const double lo = a > b ? b : a;
    return hi + std::log1p(std::exp(lo - hi));
}

struct PrefixEntry {
    double pb = kNegInf;   // log p(prefix | last frame was blank)
    double pnb = kNegInf;  // log p(prefix | last frame emitted prefix.back())
    double lm_sum = 0.0;   // sum of LM conditionals over the prefix labels
    bool lm_set = false;
};

// Keyed by label sequence: iteration order is lexicographic, which makes the
// whole search independent of insertion order.
using PrefixMap = std::map<std::vector<int>, PrefixEntry>;

// LM conditional for appending label `k` after `prev_labels`.  The LM token
// stream is the vocabulary symbol string of each label (e.g. "a", "<space>",
// "[TE]"); NGramLM::step handles sentence-start padding and <unk> mapping.
double lm_cond(const NGramLM* lm, const Vocabulary* vocab,
               const std::vector<int>& prev_labels, int k) {
    const size_t ctx = static_cast<size_t>(lm->order() - 1);
    std::vector<std::string> hist;
    const size_t start = prev_labels.size() > ctx ? prev_labels.size() - ctx : 0;
    hist.reserve(prev_labels.size() - start);
    for (size_t i = start; i < prev_labels.size(); ++i) {
        hist.push_back(vocab->symbol(prev_labels[i]));
    }
    return lm->step(hist, vocab->symbol(k));
}

}  // namespace

std::vector<int> collapse_ctc(const std::vector<int>& path, int blank_id) {
    std::vector<int> out;
    int prev = -1;  // no valid label is negative
    for (const int s : path) {
        if (s != prev && s != blank_id) out.push_back(s);
        prev = s;
    }
    return out;
}

std::vector<int> ctc_greedy_path(const std::vector<double>& logprobs, int t, int v,
                                 int blank_id) {
    check(t >= 0 && v >= 1, "ctc_greedy_path: bad grid ", t, " x ", v);
    check(logprobs.size() == static_cast<size_t>(t) * static_cast<size_t>(v),
          "ctc_greedy_path: grid has ", logprobs.size(), " entries, want ", t * v);
    (void)blank_id;
    std::vector<int> path(static_cast<size_t>(t));
    for (int ti = 0; ti < t; ++ti) {
        const double* row = logprobs.data() + static_cast<size_t>(ti) * v;
        int best = 0;
        for (int k = 1; k < v; ++k) {
            if (row[k] > row[best]) best = k;  // ties keep the lowest id
        }
        path[static_cast<size_t>(ti)] = best;
    }
    return path;
}

std::vector<Hypothesis> ctc_beam_search(const std::vector<double>& logprobs, int t, int v,
                                        const NGramLM* lm, const Vocabulary* vocab,
                                        const BeamConfig& cfg,
                                        std::vector<double>* step_mass) {
    check(t >= 0 && v >= 2, "ctc_beam_search: bad grid ", t, " x ", v);
    check(logprobs.size() == static_cast<size_t>(t) * static_cast<size_t>(v),
          "ctc_beam_search: grid has ", logprobs.size(), " entries, want ", t * v);
    const bool use_lm = lm != nullptr && vocab != nullptr;
    const double lambda = use_lm ? cfg.lm_lambda : 0.0;
    if (step_mass) step_mass->clear();

    const auto fused_of = [lambda](const PrefixEntry& e) {
        return lse2(e.pb, e.pnb) + lambda * e.lm_sum;
    };

    PrefixMap beam;
    beam[{}] = PrefixEntry{0.0, kNegInf, 0.0, true};

    for (int ti = 0; ti < t; ++ti) {
        const double* lp = logprobs.data() + static_cast<size_t>(ti) * v;
        PrefixMap next;
        for (const auto& [labels, e] : beam) {
            const double p_total = lse2(e.pb, e.pnb);
            if (p_total == kNegInf) continue;

            // Entries are only created for transitions that deliver finite
            // mass, so unreachable prefixes never enter the map.
            const auto touch = [&](const std::vector<int>& key,
                                   const std::vector<int>& parent, int new_label) -> PrefixEntry& {
                PrefixEntry& ne = next[key];
                if (!ne.lm_set) {
                    ne.lm_sum = e.lm_sum;
                    if (new_label >= 0 && use_lm) {
                        ne.lm_sum += lm_cond(lm, vocab, parent, new_label);
                    }
                    ne.lm_set = true;
                }
                return ne;
            };

            // Blank frame: prefix unchanged, ends in blank.
            if (lp[0] != kNegInf) {
                PrefixEntry& ne = touch(labels, labels, -1);
                ne.pb = lse2(ne.pb, p_total + lp[0]);
            }

            for (int k = 1; k < v; ++k) {
                const double plk = lp[k];
                if (plk == kNegInf) continue;
                if (!labels.empty() && labels.back() == k) {
                    // Same symbol again: from pnb it extends the run (prefix
                    // unchanged); from pb it starts a fresh symbol.
                    if (e.pnb != kNegInf) {
                        PrefixEntry& ne = touch(labels, labels, -1);
                        ne.pnb = lse2(ne.pnb, e.pnb + plk);
                    }
                    if (e.pb != kNegInf) {
                        std::vector<int> ext = labels;
                        ext.push_back(k);
                        PrefixEntry& xe = touch(ext, labels, k);
                        xe.pnb = lse2(xe.pnb, e.pb + plk);
                    }
                } else {
                    std::vector<int> ext = labels;
                    ext.push_back(k);
                    PrefixEntry& xe = touch(ext, labels, k);
                    xe.pnb = lse2(xe.pnb, p_total + plk);
                }
            }
        }

        // Prune to the beam.  Entries come out of the map lexicographically,
        // and the sort is stable, so ties resolve to the smaller label
        // sequence regardless of scores' arrival order.
        std::vector<std::pair<std::vector<int>, PrefixEntry>> items;
        items.reserve(next.size());
        for (auto& [labels, e] : next) items.emplace_back(labels, e);
        std::stable_sort(items.begin(), items.end(),
                         [&](const auto& a, const auto& b) {
                             return fused_of(a.second) > fused_of(b.second);
                         });
        if (cfg.beam_size > 0 && items.size() > static_cast<size_t>(cfg.beam_size)) {
            items.resize(static_cast<size_t>(cfg.beam_size));
        }
        beam.clear();
        double mass = 0.0;
        for (auto& [labels, e] : items) {
            mass += std::exp(lse2(e.pb, e.pnb));
            beam.emplace(std::move(labels), e);
        }
        if (step_mass) step_mass->push_back(mass);
    }

    std::vector<Hypothesis> out;
    out.reserve(beam.size());
    for (const auto& [labels, e] : beam) {
        Hypothesis h;
        h.labels = labels;
        h.log_p_ctc = lse2(e.pb, e.pnb);
        h.log_p_lm = e.lm_sum;
        h.fused = h.log_p_ctc + lambda * h.log_p_lm;
        if (vocab != nullptr) {
            const DecodedLabels dec = decode_labels(labels, *vocab);
            h.language = dec.language;
            h.text = dec.text;
        }
        out.push_back(std::move(h));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.fused > b.fused; });
    return out;
}

}  // namespace koel
