#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "koel/common.hpp"
#include "koel/ngram.hpp"

using namespace koel;

namespace {

std::string temp_path(const std::string& name) {
    static const long long stamp =
        static_cast<long long>(std::chrono::steady_clock::now().time_since_epoch().count());
    return (std::filesystem::temp_directory_path() / ("koel_lm_" + std::to_string(stamp) + "_" + name))
        .string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

double total_mass(const NGramLM& lm, const std::vector<std::string>& history) {
    double mass = 0.0;
    for (const std::string& tok : lm.vocab()) mass += std::exp(lm.step(history, tok));
    return mass;
}

}  // namespace

// Hand-worked Witten-Bell fixture for the single sentence "a b a", order 3.
//
// Unigram events: a b a </s>; c(a)=2, c(b)=1, c(</s>)=1, total 4, 3 distinct
// continuations; vocabulary {a, b, </s>, <unk>} with uniform base 1/4.
//   P(a)    = (2 + 3/4)  / (4+3) = 2.75/7
//   P(b)    = (1 + 3/4)  / 7     = 0.25
//   P(</s>) = (1 + 3/4)  / 7     = 0.25
//   P(<unk>)= (0 + 3/4)  / 7     = 0.75/7
// Bigram history "a": events a->b, a-></s>; c=2, T=2.
//   P(b|a)    = (1 + 2*0.25)/4 = 0.375
//   P(</s>|a) = 0.375
// Bigram histories "<s>" and "b" each saw one event with T=1:
//   P(a|<s>) = P(a|b) = (1 + 2.75/7)/2 = 9.75/14
// Trigram histories all have c=1, T=1, interpolating the bigram level:
//   P(a|<s> <s>) = (1 + 9.75/14)/2 = 0.84821428571428571428
//   P(b|<s> a)   = (1 + 0.375)/2   = 0.6875
//   P(a|a b)     = (1 + 9.75/14)/2 = 0.84821428571428571428
//   P(</s>|b a)  = (1 + 0.375)/2   = 0.6875
// An unseen (OOV-mapped) history backs off straight to the unigram table.
TEST_CASE("witten-bell probabilities match the hand-worked fixture") {
    const NGramLM lm = NGramLM::train({{"a", "b", "a"}}, 3);

    const double tol = 1e-9;
    CHECK(std::abs(lm.step({}, "a") - std::log(0.84821428571428571428)) < tol);
    CHECK(std::abs(lm.step({"a"}, "b") - std::log(0.6875)) < tol);
    CHECK(std::abs(lm.step({"a", "b"}, "a") - std::log(0.84821428571428571428)) < tol);
    CHECK(std::abs(lm.step({"b", "a"}, "</s>") - std::log(0.6875)) < tol);

    // unseen history tokens map to <unk>; "<unk> <unk>" was never seen, so
    // these are the raw unigrams
    CHECK(std::abs(lm.step({"x", "y"}, "a") - std::log(2.75 / 7.0)) < tol);
    CHECK(std::abs(lm.step({"x", "y"}, "b") - std::log(0.25)) < tol);
    CHECK(std::abs(lm.step({"x", "y"}, "</s>") - std::log(0.25)) < tol);
    CHECK(std::abs(lm.step({"x", "y"}, "zz") - std::log(0.75 / 7.0)) < tol);

    // predicted-token vocabulary: seen tokens plus </s> and <unk>, sorted
    CHECK(lm.vocab() == std::vector<std::string>{"</s>", "<unk>", "a", "b"});
}

TEST_CASE("conditional distributions sum to one for every history") {
    const NGramLM lm = NGramLM::train({{"a", "b", "a"}}, 3);
    const std::vector<std::vector<std::string>> histories = {
        {}, {"a"}, {"b"}, {"a", "b"}, {"b", "a"}, {"x", "y"}, {"a", "zzz"}};
    for (const auto& h : histories) {
        CHECK(std::abs(total_mass(lm, h) - 1.0) < 1e-6);
    }
}

TEST_CASE("normalization holds on a larger random corpus") {
    Rng rng(123);
    const std::vector<std::string> alphabet = {"p", "q", "r", "s", "t"};
    std::vector<std::vector<std::string>> corpus;
    for (int i = 0; i < 50; ++i) {
        std::vector<std::string> sent;
        const int len = 1 + rng.uniform_int(8);
        for (int j = 0; j < len; ++j) sent.push_back(alphabet[static_cast<size_t>(rng.uniform_int(5))]);
        corpus.push_back(std::move(sent));
    }
    const NGramLM lm = NGramLM::train(corpus, 3);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::string> h;
        const int len = rng.uniform_int(3);
        for (int j = 0; j < len; ++j) {
            // mix in OOV history tokens
            h.push_back(rng.bernoulli(0.2) ? "OOV" : alphabet[static_cast<size_t>(rng.uniform_int(5))]);
        }
        CHECK(std::abs(total_mass(lm, h) - 1.0) < 1e-6);
        for (const std::string& tok : lm.vocab()) {
            const double lp = lm.step(h, tok);
            CHECK(std::isfinite(lp));
            CHECK(lp < 1e-12);  // log prob <= 0
        }
    }
}

TEST_CASE("score equals the sum of stepwise conditionals plus the end marker") {
    const NGramLM lm = NGramLM::train({{"a", "b", "a"}, {"b", "b"}}, 3);
    Rng rng(9);
    const std::vector<std::string> alphabet = {"a", "b", "zz"};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> seq;
        const int len = rng.uniform_int(7);
        for (int j = 0; j < len; ++j) seq.push_back(alphabet[static_cast<size_t>(rng.uniform_int(3))]);
        double manual = 0.0;
        for (size_t i = 0; i < seq.size(); ++i) {
            manual += lm.step(std::vector<std::string>(seq.begin(), seq.begin() + static_cast<long>(i)),
                              seq[i]);
        }
        manual += lm.step(seq, NGramLM::kSentEnd);
        CHECK(lm.score(seq) == doctest::Approx(manual).epsilon(1e-13));
    }
}

TEST_CASE("save/load round-trips exactly and re-saves byte-identically") {
    const NGramLM lm = NGramLM::train({{"a", "b", "a"}, {"c", "a"}}, 3);
    const std::string p1 = temp_path("lm1.tsv");
    const std::string p2 = temp_path("lm2.tsv");
    lm.save(p1);
    const NGramLM r = NGramLM::load(p1);
    CHECK(r.order() == lm.order());
    CHECK(r.vocab() == lm.vocab());

    Rng rng(77);
    const std::vector<std::string> alphabet = {"a", "b", "c", "qq"};
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::string> h;
        for (int j = 0; j < rng.uniform_int(3); ++j) {
            h.push_back(alphabet[static_cast<size_t>(rng.uniform_int(4))]);
        }
        const std::string tok = alphabet[static_cast<size_t>(rng.uniform_int(4))];
        CHECK(lm.step(h, tok) == r.step(h, tok));  // hexfloat: exact
    }

    r.save(p2);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(!slurp(p1).empty());
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("file format is the documented five-column table") {
    const NGramLM lm = NGramLM::train({{"a"}}, 2);
    const std::string path = temp_path("format.tsv");
    lm.save(path);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        ++lines;
        // order <TAB> history <TAB> token <TAB> logprob <TAB> backoff
        int tabs = 0;
        for (const char ch : line) tabs += ch == '\t';
        CHECK(tabs == 4);
        CHECK(std::isdigit(static_cast<unsigned char>(line[0])));
    }
    CHECK(lines > 0);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(NGramLM::load(temp_path("nope.tsv")), KoelError);
}

TEST_CASE("training is deterministic") {
    const std::vector<std::vector<std::string>> corpus = {{"a", "b"}, {"b", "a", "a"}};
    const std::string p1 = temp_path("det1.tsv");
    const std::string p2 = temp_path("det2.tsv");
    NGramLM::train(corpus, 3).save(p1);
    NGramLM::train(corpus, 3).save(p2);
    CHECK(slurp(p1) == slurp(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}
