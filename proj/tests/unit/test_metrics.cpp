#include "atlas/dvae/trainer.hpp"
#include "atlas/metrics.hpp"

#include "../support/toy.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace atlas;
using namespace atlas::metrics;

namespace {

TokenList toks(const std::string& s) { return corpus::tokenize(s); }

TokenList random_sentence(std::mt19937_64& rng, int vocab, int max_len) {
    std::uniform_int_distribution<int> len(0, max_len);
    std::uniform_int_distribution<int> w(0, vocab - 1);
    TokenList out;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
        out.push_back("t" + std::to_string(w(rng)));
    }
    return out;
}

} // namespace

TEST_CASE("bleu hand counts") {
    CHECK(bleu_n(toks("a b c"), toks("a b c"), 1) == 1.0);
    CHECK(bleu_n(toks("a b c"), toks("a b c"), 2) == 1.0);
    CHECK(bleu_n(toks("a b c"), toks("d e f"), 1) == 0.0);
    CHECK(bleu_n(toks("a b c"), toks("d e f"), 2) == 0.0);
    CHECK(bleu_n(toks("a b c"), {}, 1) == 0.0);
    CHECK(ngram_precision(toks("a b c"), toks("a b d"), 1) == doctest::Approx(2.0 / 3.0));
    // p1 = 2/3, p2 = 1/2 ("a b" matches, "b d" does not), equal lengths
    CHECK(bleu_n(toks("a b c"), toks("a b d"), 2) == doctest::Approx(std::sqrt(1.0 / 3.0)));
    // clipping: "the" appears once in the reference
    CHECK(ngram_precision(toks("the cat"), toks("the the the"), 1) == doctest::Approx(1.0 / 3.0));
    // brevity penalty: hyp 2 of ref 4, all matched
    CHECK(bleu_n(toks("a b c d"), toks("a b"), 1) == doctest::Approx(std::exp(1.0 - 2.0)));
    // order-2 zero counts are smoothed, order-1 zeros are not
    CHECK(bleu_n(toks("a b"), toks("b a"), 2) == doctest::Approx(std::sqrt(1e-9)));
    BleuConfig hard;
    hard.smoothing = false;
    CHECK(bleu_n(toks("a b"), toks("b a"), 2, hard) == 0.0);
    CHECK_THROWS(bleu_n(toks("a"), toks("a"), 0));
}

TEST_CASE("corpus bleu pools counts before dividing") {
    std::vector<TokenList> refs{toks("a b c"), toks("x y")};
    std::vector<TokenList> hyps{toks("a b d"), toks("x y")};
    // unigram: (2 + 2) / (3 + 2)
    CHECK(corpus_bleu(refs, hyps, 1) == doctest::Approx(4.0 / 5.0));
    CHECK_THROWS(corpus_bleu(refs, {toks("a")}, 1));
}

TEST_CASE("bleu is invariant under token relabeling and stays in [0, 1]") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        TokenList ref = random_sentence(rng, 6, 8);
        TokenList hyp = random_sentence(rng, 6, 8);
        std::vector<int> perm{0, 1, 2, 3, 4, 5};
        std::shuffle(perm.begin(), perm.end(), rng);
        auto relabel = [&](TokenList t) {
            for (auto& x : t) {
                x = "r" + std::to_string(perm[static_cast<size_t>(std::stoi(x.substr(1)))]);
            }
            return t;
        };
        for (int n = 1; n <= 2; ++n) {
            const double b = bleu_n(ref, hyp, n);
            CHECK(b >= 0.0);
            CHECK(b <= 1.0);
            CHECK(bleu_n(relabel(ref), relabel(hyp), n) == b);
        }
    }
}

TEST_CASE("distinct-n") {
    CHECK(distinct_n({toks("a a a")}, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(distinct_n({toks("a b c d")}, 1) == 1.0);
    CHECK(distinct_n({toks("a b c d")}, 2) == 1.0);
    CHECK(distinct_n({toks("a b"), toks("a b")}, 1) == doctest::Approx(0.5 * distinct_n({toks("a b")}, 1)));
    CHECK(distinct_n({}, 1) == 0.0);
    CHECK(distinct_n({toks("a")}, 2) == 0.0);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<TokenList> u;
        for (int i = 0; i < 6; ++i) {
            u.push_back(random_sentence(rng, 5, 6));
        }
        const double d1 = distinct_n(u, 1);
        const double d2 = distinct_n(u, 2);
        std::shuffle(u.begin(), u.end(), rng);
        CHECK(distinct_n(u, 1) == d1);
        CHECK(distinct_n(u, 2) == d2);
    }
}

TEST_CASE("high-quality dialog length") {
    const std::vector<TokenList> dull{toks("i don't know")};
    std::vector<TokenList> d{toks("hi there"), toks("where to go"), toks("i don't know"), toks("ok then")};
    CHECK(hq_dialog_length(d, dull) == 3);
    std::vector<TokenList> clean;
    for (int i = 0; i < 8; ++i) {
        clean.push_back({"w" + std::to_string(i), "x" + std::to_string(i)});
    }
    CHECK(hq_dialog_length(clean, dull) == 8);
    // 9 of 10 tokens shared: overlap 0.9 > 0.8
    std::vector<TokenList> near{toks("a b"), toks("1 2 3 4 5 6 7 8 9 10"), toks("1 2 3 4 5 6 7 8 9 11"), toks("z")};
    CHECK(token_overlap(near[1], near[2]) == doctest::Approx(0.9));
    CHECK(hq_dialog_length(near, {}) == 3);
    // exactly 0.8 does not trigger
    std::vector<TokenList> edge{toks("1 2 3 4 5"), toks("1 2 3 4 6")};
    CHECK(hq_dialog_length(edge, {}) == 2);
    CHECK(hq_dialog_length({}, dull) == 0);
}

TEST_CASE("dull list seeding ranks frequent whole utterances") {
    std::istringstream in(
        "{\"id\":\"a\",\"utterances\":[\"ok\",\"go home\",\"ok\"]}\n"
        "{\"id\":\"b\",\"utterances\":[\"haha\",\"ok\",\"haha\"]}\n"
        "{\"id\":\"c\",\"utterances\":[\"eat tea\",\"go home\"]}\n");
    auto store = corpus::ingest_stream(in, corpus::Format::jsonl);
    auto dull = seed_dull_list(store, 2, 2);
    REQUIRE(dull.size() == 2);
    CHECK(dull[0] == toks("ok"));
    CHECK(dull[1] == toks("go home"));
}

TEST_CASE("reconstruction report on the toy corpus") {
    auto w = testing::toy_world(40, 5);
    dvae::DvaeModel model(testing::tiny_config(16, 3, 4), w.vocab, w.phrases, w.phrase_graph);
    ReconstructionReport before = reconstruction_eval(model, w.chain.store);
    CHECK(before.utterances == w.chain.store.utterance_count());
    CHECK(before.nll_per_token == doctest::Approx(std::log(double(w.vocab.size()))).epsilon(0.2));
    dvae::TrainConfig tc;
    tc.epochs = 8;
    tc.batch_size = 8;
    tc.adam.lr = 1e-2;
    dvae::train(model, w.chain.store, tc, nullptr);
    ReconstructionReport after = reconstruction_eval(model, w.chain.store);
    CHECK(after.nll < before.nll);
    CHECK(after.bleu1 > before.bleu1);
    for (double v : {after.bleu1, after.bleu2, after.dist1, after.dist2}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}
