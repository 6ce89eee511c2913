#include "atlas/dvae/model.hpp"
#include "atlas/dvae/trainer.hpp"
#include "atlas/nn/adam.hpp"

#include "../support/gradcheck.hpp"
#include "../support/kl_oracle.hpp"
#include "../support/toy.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace atlas;
using namespace atlas::dvae;
using atlas::testing::tiny_config;
using atlas::testing::toy_world;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<corpus::TokenIds> encode_session(const DvaeModel& m, const corpus::DialogSession& s) {
    std::vector<corpus::TokenIds> out;
    for (const auto& u : s.utterances) {
        out.push_back(m.encode(u.tokens));
    }
    return out;
}

double cosine(const Matrix& a, const Matrix& b) { return a.col(0).dot(b.col(0)) / (a.norm() * b.norm()); }

} // namespace

TEST_CASE("isolated vertex propagates to sigmoid(0)") {
    Matrix h0 = Matrix::Random(3, 1);
    Matrix h = gcn_propagate(h0, Adjacency(1), 1);
    CHECK((h.array() == 0.5).all());
}

TEST_CASE("two-vertex cycle, three layers by hand") {
    // directed a->b and b->a collapse to one undirected neighbor each
    Adjacency adj = undirected_adjacency(2, {{0, 1}, {1, 0}});
    Matrix h0 = Matrix::Zero(2, 2);
    const double expected[] = {0.5, 0.6224593312018546, 0.6507776782147005};
    for (int layers = 1; layers <= 3; ++layers) {
        Matrix h = gcn_propagate(h0, adj, layers);
        for (Eigen::Index i = 0; i < h.size(); ++i) {
            CHECK(std::abs(h.data()[i] - expected[layers - 1]) < 1e-9);
        }
    }
    // the same numbers from the scalar recurrence a_j = sig(a_{j-1})
    CHECK(std::abs(sig(sig(sig(0.0))) - expected[2]) < 1e-15);
}

TEST_CASE("three-vertex path, three layers by hand") {
    Adjacency adj = undirected_adjacency(3, {{0, 1}, {1, 2}});
    Matrix h0(1, 3);
    h0 << 1.0, 2.0, 3.0;
    Matrix h = gcn_propagate(h0, adj, 3);
    CHECK(std::abs(h(0, 0) - 0.7012818115707605) < 1e-9);
    CHECK(std::abs(h(0, 1) - 0.810769082538263) < 1e-9);
    CHECK(std::abs(h(0, 2) - 0.7012818115707605) < 1e-9);
    Matrix h1 = gcn_propagate(h0, adj, 1);
    CHECK(std::abs(h1(0, 1) - sig(4.0)) < 1e-12);
}

TEST_CASE("gcn is permutation equivariant") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 10;
        std::vector<std::pair<int, int>> edges;
        std::bernoulli_distribution e(0.25);
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
                if (a != b && e(rng)) {
                    edges.emplace_back(a, b);
                }
            }
        }
        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::pair<int, int>> pedges;
        for (auto [a, b] : edges) {
            pedges.emplace_back(perm[a], perm[b]);
        }
        Matrix h0 = Matrix::Random(4, n);
        Matrix ph0(4, n);
        for (int v = 0; v < n; ++v) {
            ph0.col(perm[v]) = h0.col(v);
        }
        Matrix out = gcn_propagate(h0, undirected_adjacency(n, edges), 3);
        Matrix pout = gcn_propagate(ph0, undirected_adjacency(n, pedges), 3);
        for (int v = 0; v < n; ++v) {
            CHECK((out.col(v) - pout.col(perm[v])).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("on-tape receptive-field GCN equals whole-graph propagation") {
    auto w = toy_world(40);
    DvaeModel m(tiny_config(), w.vocab, w.phrases, w.phrase_graph);
    REQUIRE(!w.phrase_graph.edges.empty());
    FrozenVertices fv = m.freeze_vertices();
    Matrix expected = gcn_propagate(fv.utter, m.adjacency(), 3);
    CHECK((fv.structure - expected).cwiseAbs().maxCoeff() < 1e-12);

    nn::Tape tape;
    Forward f{tape};
    m.prepare_vertices(f, {0, 5});
    CHECK((f.structure.at(5).value().col(0) - expected.col(5)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("coupled vertex embedding") {
    auto w = toy_world(20);
    DvaeModel m(tiny_config(), w.vocab, w.phrases, w.phrase_graph);
    SUBCASE("zero phrase words and zero latent give zero") {
        m.params().find_table("words")->value().setZero();
        m.params().find_table("latent")->value().setZero();
        nn::Tape t;
        Forward f{t};
        CHECK(m.utter_vertex_embedding(f, 0).value().isZero(1e-15));
    }
    SUBCASE("latent vector changes the embedding") {
        nn::Tape t;
        Forward f{t};
        Matrix a = m.utter_vertex_embedding(f, 1).value();
        m.params().find_table("latent")->value().col(1).array() += 0.5;
        Matrix b = m.utter_vertex_embedding(f, 1).value();
        CHECK((a - b).norm() > 1e-6);
    }
    SUBCASE("gradient w.r.t. the latent vector matches finite differences") {
        auto loss = [&](bool grad) {
            nn::Tape t;
            Forward f{t};
            nn::Var y = m.utter_vertex_embedding(f, 2);
            nn::Var l = nn::sum(nn::cmul(nn::tanh(y), nn::tanh(y)));
            if (grad) {
                t.backward(l);
            }
            return l.scalar();
        };
        loss(true);
        const auto& lg = m.params().find_table("latent")->grad();
        REQUIRE(lg.size() == 1);
        CHECK(lg.begin()->first == 2);
        CHECK(lg.begin()->second.norm() > 0.0);
        m.params().zero_grad();
        for (const auto& p : atlas::testing::probe_parameters(m.params(), loss, 400, 1)) {
            CHECK(p.rel_error() < 1e-4);
        }
    }
    SUBCASE("unknown vertex") {
        nn::Tape t;
        Forward f{t};
        CHECK_THROWS_AS(m.utter_vertex_embedding(f, m.num_utter_vertices()), std::out_of_range);
    }
}

TEST_CASE("categorical sampling") {
    nn::Tape t;
    SUBCASE("equal logits give a uniform posterior") {
        auto s = sample_categorical(t, t.constant(Matrix::Constant(4, 1, 0.3)), SampleMode::argmax, 1.0, nullptr);
        for (int i = 0; i < 4; ++i) {
            CHECK(std::exp(s.log_probs.value()(i, 0)) == doctest::Approx(0.25).epsilon(1e-12));
        }
        CHECK(s.index == 0);
    }
    SUBCASE("gumbel-max frequencies match the softmax") {
        Matrix logits(4, 1);
        logits << 1.0, 0.0, -0.5, 2.0;
        Vector p = (logits.col(0).array().exp() / logits.col(0).array().exp().sum()).matrix();
        std::mt19937_64 rng(99);
        std::vector<int> counts(4, 0);
        const int draws = 10000;
        for (int d = 0; d < draws; ++d) {
            nn::Tape tt;
            auto s = sample_categorical(tt, tt.constant(logits), SampleMode::sample, 0.1, &rng);
            CHECK(s.selector.value().sum() == 1.0);
            CHECK(s.selector.value()(s.index, 0) == 1.0);
            ++counts[static_cast<size_t>(s.index)];
        }
        for (int i = 0; i < 4; ++i) {
            const double sigma = std::sqrt(p[i] * (1 - p[i]) / draws);
            CHECK(std::abs(counts[static_cast<size_t>(i)] / double(draws) - p[i]) < 3 * sigma);
        }
    }
}

TEST_CASE("KL against uniform priors") {
    Vector uniform = Vector::Constant(5, 0.2);
    CHECK(std::abs(kl_to_uniform(uniform, 5)) < 1e-15);
    Vector onehot = Vector::Zero(5);
    onehot[3] = 1.0;
    CHECK(kl_to_uniform(onehot, 5) == doctest::Approx(std::log(5.0)));

    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> cdist(1, 3);
    std::uniform_int_distribution<int> kdist(1, 4);
    std::uniform_int_distribution<int> mdist(1, 3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Vector> qs;
        double decomposed = 0.0;
        for (int j = cdist(rng); j > 0; --j) {
            qs.push_back(atlas::testing::random_distribution(kdist(rng), rng));
            decomposed += kl_to_uniform(qs.back(), static_cast<double>(qs.back().size()));
        }
        Vector qg = atlas::testing::random_distribution(mdist(rng), rng);
        decomposed += kl_to_uniform(qg, static_cast<double>(qg.size()));
        CHECK(std::abs(decomposed - atlas::testing::joint_kl_bruteforce(qs, qg)) < 1e-6);
    }
    // the tape version agrees with the closed form
    nn::Tape t;
    Vector q = atlas::testing::random_distribution(4, rng);
    nn::Var lp = t.constant(Matrix(q.array().log().matrix()));
    CHECK(kl_to_uniform(lp, 4).scalar() == doctest::Approx(kl_to_uniform(q, 4)).epsilon(1e-12));
}

TEST_CASE("recognition posteriors are valid distributions with in-shortlist samples") {
    auto w = toy_world(30);
    DvaeModel m(tiny_config(8, 3, 6), w.vocab, w.phrases, w.phrase_graph);
    std::mt19937_64 rng(4);
    for (const auto& s : w.chain.store.sessions()) {
        nn::Tape t;
        Forward f{t, SampleMode::sample, 0.5, &rng, true};
        ElboTerms e = m.elbo(f, encode_session(m, s));
        for (const auto& u : e.recognition.utterances) {
            CHECK(u.posterior.sum() == doctest::Approx(1.0).epsilon(1e-9));
            CHECK((u.posterior.array() >= 0).all());
            CHECK(u.shortlist.size() <= 50);
            CHECK(std::find(u.shortlist.begin(), u.shortlist.end(), u.vertex) != u.shortlist.end());
        }
        CHECK(e.recognition.goal_posterior.sum() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(e.recognition.goal >= 0);
        CHECK(e.recognition.goal < 3);
        CHECK(e.recon_nll >= 0.0);
    }
    nn::Tape t;
    Forward f{t};
    CHECK_THROWS(m.recognize_utterance(f, {5, 6}, {}));
}

TEST_CASE("session recognition") {
    auto w = toy_world(30);
    SUBCASE("single goal has probability one") {
        DvaeModel m(tiny_config(8, 1), w.vocab, w.phrases, w.phrase_graph);
        nn::Tape t;
        Forward f{t};
        auto r = m.recognize(f, encode_session(m, w.chain.store[0]));
        CHECK(r.goal_posterior.size() == 1);
        CHECK(r.goal_posterior[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("argmax recognition is deterministic") {
        DvaeModel m(tiny_config(8, 4), w.vocab, w.phrases, w.phrase_graph);
        auto sess = encode_session(m, w.chain.store[1]);
        nn::Tape t1;
        Forward f1{t1};
        nn::Tape t2;
        Forward f2{t2};
        auto a = m.recognize(f1, sess);
        auto b = m.recognize(f2, sess);
        CHECK(a.goal == b.goal);
        CHECK(a.goal_posterior == b.goal_posterior);
        for (size_t i = 0; i < a.utterances.size(); ++i) {
            CHECK(a.utterances[i].vertex == b.utterances[i].vertex);
        }
    }
    SUBCASE("overlapping vertex sequences encode closer than disjoint ones") {
        DvaeModel m(tiny_config(8, 4), w.vocab, w.phrases, w.phrase_graph);
        TrainConfig tc;
        tc.epochs = 3;
        tc.batch_size = 8;
        tc.adam.lr = 0.01;
        train(m, w.chain.store, tc);
        FrozenVertices fv = m.freeze_vertices();
        nn::Tape t;
        Forward f{t};
        f.frozen = &fv;
        auto enc = [&](std::vector<int> ids) {
            m.prepare_vertices(f, ids);
            std::vector<nn::Var> seq;
            for (int i : ids) {
                seq.push_back(f.structure.at(i));
            }
            return m.session_encoding(f, seq).value();
        };
        Matrix a = enc({0, 1, 2, 3});
        Matrix b = enc({0, 1, 2, 4});
        Matrix c = enc({5, 6, 7, 8});
        CHECK(cosine(a, b) > cosine(a, c));
    }
}

TEST_CASE("reconstruction NLL at initialization is near uniform") {
    auto w = toy_world(20);
    DvaeModel m(tiny_config(), w.vocab, w.phrases, w.phrase_graph);
    nn::Tape t;
    Forward f{t};
    auto sess = encode_session(m, w.chain.store[0]);
    nn::Var init = m.decoder_init(f, t.constant(Matrix::Zero(8, 1)), t.constant(Matrix::Zero(8, 1)));
    const double nll = m.reconstruct_nll(f, init, sess[0]).scalar();
    const double per_token = nll / static_cast<double>(sess[0].size() + 1);
    const double ln_v = std::log(static_cast<double>(m.vocab().size()));
    CHECK(per_token > 0.0);
    CHECK(std::abs(per_token - ln_v) < 0.2 * ln_v);
}

TEST_CASE("overfitting one session lowers the NLL") {
    auto w = toy_world(20);
    DvaeModel m(tiny_config(), w.vocab, w.phrases, w.phrase_graph);
    auto sess = encode_session(m, w.chain.store[0]);
    nn::Adam opt(m.params(), nn::AdamConfig{.lr = 0.01});
    std::mt19937_64 rng(2);
    double first = 0.0;
    double last = 0.0;
    for (int step = 0; step < 100; ++step) {
        nn::Tape t;
        Forward f{t, SampleMode::sample, 0.5, &rng, true};
        ElboTerms e = m.elbo(f, sess);
        t.backward(e.total);
        opt.step();
        (step == 0 ? first : last) = e.recon_nll;
    }
    CHECK(last < 0.5 * first);
}

TEST_CASE("only shortlisted latent vectors receive gradient") {
    auto w = toy_world(20);
    DvaeModel m(tiny_config(8, 3, 3), w.vocab, w.phrases, w.phrase_graph);
    std::mt19937_64 rng(8);
    auto sess = encode_session(m, w.chain.store[2]);
    nn::Tape t;
    Forward f{t, SampleMode::sample, 1.0, &rng, true};
    ElboTerms e = m.elbo(f, sess);
    t.backward(e.total);
    std::set<int> allowed;
    for (const auto& u : e.recognition.utterances) {
        allowed.insert(u.shortlist.begin(), u.shortlist.end());
    }
    const auto& grads = m.params().find_table("latent")->grad();
    CHECK(!grads.empty());
    for (const auto& [col, g] : grads) {
        CHECK(allowed.contains(col));
    }
    CHECK(allowed.size() < static_cast<size_t>(m.num_utter_vertices()));
}

TEST_CASE("ELBO gradients match central differences") {
    auto w = toy_world(20);
    DvaeModel m(tiny_config(8, 3, 4), w.vocab, w.phrases, w.phrase_graph);
    auto sess = encode_session(m, w.chain.store[3]);
    auto loss = [&](bool grad) {
        nn::Tape t;
        std::mt19937_64 rng(1234);
        Forward f{t, SampleMode::relaxed, 0.8, &rng, false};
        ElboTerms e = m.elbo(f, sess);
        if (grad) {
            t.backward(e.total);
        }
        return e.total.scalar();
    };
    // relative error on entries with a resolvable gradient
    auto probes = atlas::testing::probe_parameters(m.params(), loss, 80, 77, 1e-4, 1e-5);
    CHECK(probes.size() == 80);
    for (const auto& p : probes) {
        CHECK(p.rel_error() < 1e-3);
    }
    // absolute agreement everywhere else
    for (const auto& p : atlas::testing::probe_parameters(m.params(), loss, 80, 78, 1e-4)) {
        CHECK(std::abs(p.analytic - p.numeric) < 1e-7);
    }
}

TEST_CASE("checkpoint round-trip preserves fingerprint and recognition") {
    auto w = toy_world(20);
    DvaeModel m(tiny_config(), w.vocab, w.phrases, w.phrase_graph);
    auto dir = std::filesystem::temp_directory_path() / "atlas_dvae_ckpt";
    std::filesystem::remove_all(dir);
    m.save(dir);
    DvaeModel l = DvaeModel::load(dir);
    CHECK(l.fingerprint() == m.fingerprint());
    auto sess = encode_session(m, w.chain.store[0]);
    nn::Tape t1;
    Forward f1{t1};
    nn::Tape t2;
    Forward f2{t2};
    CHECK(m.recognize(f1, sess).goal_posterior == l.recognize(f2, sess).goal_posterior);
    std::filesystem::remove_all(dir);
}

TEST_CASE("temperature schedule is linear from start to end") {
    TrainConfig c;
    CHECK(tau_at(c, 0, 11) == doctest::Approx(1.0));
    CHECK(tau_at(c, 5, 11) == doctest::Approx(0.55));
    CHECK(tau_at(c, 10, 11) == doctest::Approx(0.1));
}

TEST_CASE("training run lowers the loss and is reproducible") {
    auto w = toy_world(40);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 8;
    tc.adam.lr = 0.01;
    DvaeModel a(tiny_config(), w.vocab, w.phrases, w.phrase_graph);
    DvaeModel b(tiny_config(), w.vocab, w.phrases, w.phrase_graph);
    auto ha = train(a, w.chain.store, tc);
    auto hb = train(b, w.chain.store, tc);
    REQUIRE(ha.size() == 3);
    CHECK(ha.back().nll_per_token < ha.front().nll_per_token);
    CHECK(a.fingerprint() == b.fingerprint());
    CHECK(ha.back().loss == hb.back().loss);
}

TEST_CASE("non-finite parameters abort training with a diagnostic") {
    auto w = toy_world(10);
    DvaeModel m(tiny_config(), w.vocab, w.phrases, w.phrase_graph);
    m.params().find("output.b")->value()(0, 0) = std::nan("");
    TrainConfig tc;
    tc.epochs = 1;
    CHECK_THROWS_AS(train(m, w.chain.store, tc), DivergenceError);
}
