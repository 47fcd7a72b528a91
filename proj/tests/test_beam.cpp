#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "koel/beam.hpp"
#include "koel/common.hpp"
#include "koel/ngram.hpp"
#include "koel/vocab.hpp"

using namespace koel;

namespace {

std::vector<double> random_logprob_grid(int t, int v, Rng& rng, double spread = 3.0) {
    std::vector<double> lp(static_cast<size_t>(t) * v);
    for (int ti = 0; ti < t; ++ti) {
        double* row = lp.data() + static_cast<size_t>(ti) * v;
        double mx = -1e30;
        for (int k = 0; k < v; ++k) {
            row[k] = rng.uniform(-spread, spread);
            mx = std::max(mx, row[k]);
        }
        double z = 0.0;
        for (int k = 0; k < v; ++k) z += std::exp(row[k] - mx);
        const double logz = mx + std::log(z);
        for (int k = 0; k < v; ++k) row[k] -= logz;
    }
    return lp;
}

struct OracleHyp {
    std::vector<int> labels;
    double log_p_ctc;
    double log_p_lm;
    double fused;
};

// Exact posterior over collapsed sequences by enumerating all v^t paths,
// then scoring with the same LM token stream the beam uses. Ranking matches
// the beam's: fused descending, then labels ascending (lexicographic).
std::vector<OracleHyp> beam_oracle(const std::vector<double>& lp, int t, int v,
                                   const NGramLM* lm, const Vocabulary* vocab,
                                   double lambda) {
    std::map<std::vector<int>, double> prob;  // collapsed -> total probability
    std::vector<int> path(static_cast<size_t>(t), 0);
    while (true) {
        std::vector<int> collapsed;
        int prev = -1;
        for (const int s : path) {
            if (s != prev && s != 0) collapsed.push_back(s);
            prev = s;
        }
        double logp = 0.0;
        for (int i = 0; i < t; ++i) logp += lp[static_cast<size_t>(i) * v + path[i]];
        prob[collapsed] += std::exp(logp);
        int pos = t - 1;
        while (pos >= 0 && ++path[static_cast<size_t>(pos)] == v) {
            path[static_cast<size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
    }
    std::vector<OracleHyp> out;
    for (const auto& [labels, p] : prob) {
        OracleHyp h;
        h.labels = labels;
        h.log_p_ctc = std::log(p);
        h.log_p_lm = 0.0;
        if (lm != nullptr && vocab != nullptr) {
            std::vector<std::string> hist;
            for (const int id : labels) {
                h.log_p_lm += lm->step(hist, vocab->symbol(id));
                hist.push_back(vocab->symbol(id));
            }
        }
        h.fused = h.log_p_ctc + lambda * h.log_p_lm;
        out.push_back(std::move(h));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const OracleHyp& a, const OracleHyp& b) { return a.fused > b.fused; });
    return out;
}

}  // namespace

TEST_CASE("collapse_ctc merges repeats then strips blanks") {
    CHECK(collapse_ctc({0, 1, 1, 0, 1, 2, 2, 0, 0}) == std::vector<int>{1, 1, 2});
    CHECK(collapse_ctc({}) == std::vector<int>{});
    CHECK(collapse_ctc({0, 0, 0}) == std::vector<int>{});
    CHECK(collapse_ctc({2, 2, 2}) == std::vector<int>{2});
    CHECK(collapse_ctc({1, 2, 3}) == std::vector<int>{1, 2, 3});
}

TEST_CASE("greedy path takes the per-frame argmax") {
    // rows: argmax 1, 0, 2
    const std::vector<double> lp = {-2, -0.1, -5, -0.1, -2, -5, -5, -2, -0.1};
    CHECK(ctc_greedy_path(lp, 3, 3) == std::vector<int>{1, 0, 2});
    CHECK_THROWS_AS(ctc_greedy_path(lp, 2, 4), KoelError);
}

TEST_CASE("unpruned beam matches the exhaustive oracle without an LM") {
    Rng rng(1001);
    BeamConfig cfg;
    cfg.beam_size = -1;
    for (int trial = 0; trial < 200; ++trial) {
        const int t = 4, v = 3;
        const std::vector<double> lp = random_logprob_grid(t, v, rng);
        const auto oracle = beam_oracle(lp, t, v, nullptr, nullptr, 0.0);
        const auto got = ctc_beam_search(lp, t, v, nullptr, nullptr, cfg);
        REQUIRE(got.size() == oracle.size());
        CHECK(got.front().labels == oracle.front().labels);
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].labels == oracle[i].labels);
            CHECK(std::abs(got[i].log_p_ctc - oracle[i].log_p_ctc) < 1e-9);
        }
    }
}

TEST_CASE("unpruned beam matches the oracle under shallow fusion") {
    const Vocabulary vocab = build_grapheme_vocab({{"TE", {"ab ba", "aab"}}});
    // ids 1 and 2 are 'a' and 'b'; the grid only ever emits those
    REQUIRE(vocab.id("a") == 1);
    REQUIRE(vocab.id("b") == 2);
    const NGramLM lm = NGramLM::train(
        {{"a", "b"}, {"b", "a"}, {"a", "a", "b"}, {"b", "b"}, {"a"}}, 3);

    Rng rng(2002);
    for (const double lambda : {0.0, 1.4}) {
        BeamConfig cfg;
        cfg.beam_size = -1;
        cfg.lm_lambda = lambda;
        for (int trial = 0; trial < 150; ++trial) {
            const int t = 4, v = 3;
            const std::vector<double> lp = random_logprob_grid(t, v, rng);
            const auto oracle = beam_oracle(lp, t, v, &lm, &vocab, lambda);
            const auto got = ctc_beam_search(lp, t, v, &lm, &vocab, cfg);
            REQUIRE(got.size() == oracle.size());
            CHECK(got.front().labels == oracle.front().labels);
            for (size_t i = 0; i < got.size(); ++i) {
                CHECK(got[i].labels == oracle[i].labels);
                CHECK(std::abs(got[i].log_p_ctc - oracle[i].log_p_ctc) < 1e-9);
                CHECK(std::abs(got[i].log_p_lm - oracle[i].log_p_lm) < 1e-9);
                CHECK(std::abs(got[i].fused - oracle[i].fused) < 1e-9);
            }
        }
    }
}

TEST_CASE("ties rank lexicographically, matching the oracle order") {
    const int t = 2, v = 3;
    const std::vector<double> lp(static_cast<size_t>(t) * v, std::log(1.0 / 3.0));
    BeamConfig cfg;
    cfg.beam_size = -1;
    const auto oracle = beam_oracle(lp, t, v, nullptr, nullptr, 0.0);
    const auto got = ctc_beam_search(lp, t, v, nullptr, nullptr, cfg);
    REQUIRE(got.size() == oracle.size());
    for (size_t i = 0; i < got.size(); ++i) CHECK(got[i].labels == oracle[i].labels);
}

TEST_CASE("retained probability mass is one unpruned, at most one pruned") {
    Rng rng(3003);
    const int t = 6, v = 4;
    const std::vector<double> lp = random_logprob_grid(t, v, rng);

    BeamConfig all;
    all.beam_size = -1;
    std::vector<double> mass;
    ctc_beam_search(lp, t, v, nullptr, nullptr, all, &mass);
    REQUIRE(static_cast<int>(mass.size()) == t);
    for (const double m : mass) CHECK(std::abs(m - 1.0) < 1e-9);

    BeamConfig tight;
    tight.beam_size = 2;
    ctc_beam_search(lp, t, v, nullptr, nullptr, tight, &mass);
    for (const double m : mass) {
        CHECK(m <= 1.0 + 1e-12);
        CHECK(m >= 0.0);
    }
}

TEST_CASE("wider beams never lower the reported top score") {
    Rng rng(4004);
    for (int trial = 0; trial < 50; ++trial) {
        const int t = 5, v = 4;
        const std::vector<double> lp = random_logprob_grid(t, v, rng);
        double prev = -1e300;
        for (const int bs : {1, 2, 5, 20, -1}) {
            BeamConfig cfg;
            cfg.beam_size = bs;
            const auto got = ctc_beam_search(lp, t, v, nullptr, nullptr, cfg);
            REQUIRE(!got.empty());
            CHECK(got.front().fused >= prev - 1e-12);
            prev = got.front().fused;
        }
    }
}

TEST_CASE("shallow fusion can overturn the CTC-preferred hypothesis") {
    const Vocabulary vocab = build_grapheme_vocab({{"TE", {"ab", "ba"}}});
    // LM that has only ever seen "b a"
    const NGramLM lm = NGramLM::train({{"b", "a"}, {"b", "a"}, {"b", "a"}}, 3);

    // frame 0 prefers 'a', frame 1 prefers 'b': CTC picks "ab"
    const std::vector<double> lp = {
        std::log(0.05), std::log(0.60), std::log(0.35),
        std::log(0.05), std::log(0.35), std::log(0.60),
    };
    const auto rank_of = [](const std::vector<Hypothesis>& hyps, const std::vector<int>& labels) {
        for (size_t i = 0; i < hyps.size(); ++i) {
            if (hyps[i].labels == labels) return static_cast<int>(i);
        }
        return -1;
    };

    BeamConfig no_lm;
    no_lm.beam_size = -1;
    no_lm.lm_lambda = 0.0;
    const auto plain = ctc_beam_search(lp, 2, 3, &lm, &vocab, no_lm);
    REQUIRE(!plain.empty());
    CHECK(plain.front().labels == std::vector<int>{1, 2});  // "ab" wins on CTC alone

    BeamConfig fused;
    fused.beam_size = -1;
    fused.lm_lambda = 1.4;
    const auto rescored = ctc_beam_search(lp, 2, 3, &lm, &vocab, fused);
    const int rank_ba = rank_of(rescored, {2, 1});
    const int rank_ab = rank_of(rescored, {1, 2});
    REQUIRE(rank_ba >= 0);
    REQUIRE(rank_ab >= 0);
    CHECK(rank_ba < rank_ab);  // the LM overturns the CTC preference
    CHECK(rescored[static_cast<size_t>(rank_ba)].text == "ba");
}

TEST_CASE("hypotheses carry decoded text and language tags") {
    const Vocabulary vocab = build_grapheme_vocab({{"TA", {"xy"}}});
    const int te_label = vocab.id("[TA]");
    const int x = vocab.id("x");
    const int y = vocab.id("y");
    // grid that deterministically emits [TA] x y
    const int v = vocab.size();
    std::vector<double> lp(static_cast<size_t>(3) * v, std::log(1e-8));
    lp[static_cast<size_t>(0) * v + te_label] = std::log(0.999);
    lp[static_cast<size_t>(1) * v + x] = std::log(0.999);
    lp[static_cast<size_t>(2) * v + y] = std::log(0.999);
    BeamConfig cfg;
    const auto got = ctc_beam_search(lp, 3, v, nullptr, &vocab, cfg);
    REQUIRE(!got.empty());
    CHECK(got.front().labels == std::vector<int>{te_label, x, y});
    REQUIRE(got.front().language.has_value());
    CHECK(*got.front().language == "TA");
    CHECK(got.front().text == "xy");
}

TEST_CASE("degenerate inputs") {
    BeamConfig cfg;
    const auto empty = ctc_beam_search({}, 0, 3, nullptr, nullptr, cfg);
    REQUIRE(empty.size() == 1);
    CHECK(empty.front().labels.empty());
    CHECK(empty.front().log_p_ctc == 0.0);
    CHECK_THROWS_AS(ctc_beam_search({0.0, 0.0}, 1, 3, nullptr, nullptr, cfg), KoelError);
    CHECK_THROWS_AS(ctc_beam_search({0.0}, 1, 1, nullptr, nullptr, cfg), KoelError);
}

TEST_CASE("search is deterministic across repeated calls") {
    Rng rng(5005);
    const std::vector<double> lp = random_logprob_grid(6, 4, rng);
    BeamConfig cfg;
    cfg.beam_size = 3;
    const auto a = ctc_beam_search(lp, 6, 4, nullptr, nullptr, cfg);
    const auto b = ctc_beam_search(lp, 6, 4, nullptr, nullptr, cfg);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].labels == b[i].labels);
        CHECK(a[i].fused == b[i].fused);
    }
}
