// Acceptance suite: one PASS/FAIL line per criterion. Arguments select a
// subset by number; no arguments runs all of them.

#include "atlas/chat_service.hpp"
#include "atlas/dvae/model.hpp"
#include "atlas/dvae/trainer.hpp"
#include "atlas/gcs/a2c.hpp"
#include "atlas/gcs/agent.hpp"
#include "atlas/gcs/simulator.hpp"
#include "atlas/graph.hpp"
#include "atlas/metrics.hpp"

#include "../support/gcs_toy.hpp"
#include "../support/gradcheck.hpp"
#include "../support/graph_oracle.hpp"
#include "../support/kl_oracle.hpp"
#include "../support/toy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>

using namespace atlas;
using nlohmann::json;
using atlas::nn::Matrix;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string fmt(const char* f, double a, double b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

corpus::TokenList toks(const std::string& s) { return corpus::tokenize(s); }

std::vector<corpus::TokenIds> encode_session(const dvae::DvaeModel& m, const corpus::DialogSession& s) {
    std::vector<corpus::TokenIds> out;
    for (const auto& u : s.utterances) {
        out.push_back(m.encode(u.tokens));
    }
    return out;
}

Outcome kl_identity() {
    Outcome o;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> cdist(1, 3);
    std::uniform_int_distribution<int> kdist(1, 4);
    std::uniform_int_distribution<int> mdist(1, 3);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Eigen::VectorXd> qs;
        double decomposed = 0.0;
        for (int j = cdist(rng); j > 0; --j) {
            qs.push_back(testing::random_distribution(kdist(rng), rng));
            decomposed += dvae::kl_to_uniform(qs.back(), static_cast<double>(qs.back().size()));
        }
        Eigen::VectorXd qg = testing::random_distribution(mdist(rng), rng);
        decomposed += dvae::kl_to_uniform(qg, static_cast<double>(qg.size()));
        worst = std::max(worst, std::abs(decomposed - testing::joint_kl_bruteforce(qs, qg)));
    }
    const double secs = seconds_since(t0);
    o.require(worst < 1e-6, fmt("max error %.3g >= 1e-6", worst));
    o.require(secs < 10.0, fmt("took %.2fs", secs));
    o.detail = o.pass ? fmt("100 posteriors, max |diff| %.2g, %.3fs", worst, secs) : o.detail;
    return o;
}

std::vector<graph::SessionAssignment> random_assignments(std::mt19937_64& rng, int n_utter, int n_sess) {
    std::uniform_int_distribution<int> sessions(1, 50);
    std::uniform_int_distribution<int> len(1, 8);
    std::uniform_int_distribution<int> u(0, n_utter - 1);
    std::uniform_int_distribution<int> g(0, n_sess - 1);
    std::vector<graph::SessionAssignment> out(static_cast<size_t>(sessions(rng)));
    for (auto& a : out) {
        for (int i = len(rng); i > 0; --i) {
            a.z.push_back(u(rng));
        }
        a.g = g(rng);
    }
    return out;
}

std::vector<phrases::Phrase> numbered_phrases(int n) {
    std::vector<phrases::Phrase> out;
    for (int i = 0; i < n; ++i) {
        out.push_back({i, {"p" + std::to_string(i)}, 1});
    }
    return out;
}

Outcome graph_oracle() {
    Outcome o;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(31);
    size_t checked = 0;
    for (int set = 0; set < 24; ++set) {
        const int n_utter = 3 + set % 9;
        const int n_sess = 1 + set % 4;
        auto sessions = random_assignments(rng, n_utter, n_sess);
        auto stats = graph::accumulate(sessions);
        for (double alpha : {0.0, 0.05, 0.2}) {
            graph::Thresholds th{alpha, alpha, alpha, true};
            auto g = graph::build_graph(stats, th, numbered_phrases(n_utter));
            auto want = testing::oracle_edges(sessions, n_utter, n_sess, alpha, alpha, alpha);
            const bool same = testing::edge_set(g.uu_edges()) == want.uu &&
                              testing::edge_set(g.su_edges()) == want.su && testing::edge_set(g.ss_edges()) == want.ss;
            o.require(same, "set " + std::to_string(set) + " alpha " + fmt("%g", alpha) + " differs");
            ++checked;
        }
    }
    const double secs = seconds_since(t0);
    o.require(secs < 30.0, fmt("took %.2fs", secs));
    o.detail = o.pass ? "24 assignment sets x 3 thresholds identical, " + fmt("%.3fs", secs) : o.detail;
    return o;
}

Outcome gradient_check() {
    Outcome o;
    auto w = testing::toy_world(20);
    dvae::DvaeModel m(testing::tiny_config(8, 3, 4), w.vocab, w.phrases, w.phrase_graph);
    auto sess = encode_session(m, w.chain.store[3]);
    auto loss = [&](bool grad) {
        nn::Tape t;
        std::mt19937_64 rng(1234);
        dvae::Forward f{t, dvae::SampleMode::relaxed, 0.8, &rng, false};
        dvae::ElboTerms e = m.elbo(f, sess);
        if (grad) {
            t.backward(e.total);
        }
        return e.total.scalar();
    };
    auto probes = testing::probe_parameters(m.params(), loss, 60, 77, 1e-4, 1e-5);
    double worst = 0.0;
    for (const auto& p : probes) {
        worst = std::max(worst, p.rel_error());
    }
    o.require(probes.size() >= 50, "only " + std::to_string(probes.size()) + " probes");
    o.require(worst < 1e-3, fmt("max relative error %.3g", worst));
    o.detail = o.pass ? std::to_string(probes.size()) + " params, d=8, " + fmt("max relative error %.2g", worst) : o.detail;
    return o;
}

Outcome gumbel() {
    Outcome o;
    Matrix logits(4, 1);
    logits << 1.0, 0.0, -0.5, 2.0;
    Eigen::VectorXd p = (logits.col(0).array().exp() / logits.col(0).array().exp().sum()).matrix();
    std::mt19937_64 rng(99);
    std::vector<int> counts(4, 0);
    const int draws = 10000;
    bool one_hot = true;
    for (int d = 0; d < draws; ++d) {
        nn::Tape t;
        auto s = dvae::sample_categorical(t, t.constant(logits), dvae::SampleMode::sample, 0.5, &rng);
        const Matrix& sel = s.selector.value();
        one_hot = one_hot && sel.sum() == 1.0 && sel(s.index, 0) == 1.0 && (sel.array() == 0.0 || sel.array() == 1.0).all();
        ++counts[static_cast<size_t>(s.index)];
    }
    o.require(one_hot, "selector not exactly one-hot");
    double worst_sigmas = 0.0;
    for (int i = 0; i < 4; ++i) {
        const double sigma = std::sqrt(p[i] * (1 - p[i]) / draws);
        worst_sigmas = std::max(worst_sigmas, std::abs(counts[static_cast<size_t>(i)] / double(draws) - p[i]) / sigma);
    }
    o.require(worst_sigmas < 3.0, fmt("frequency off by %.2f sigma", worst_sigmas));

    // straight-through: loss = <selector, c> reaches the logits
    nn::Parameter param("logits", logits);
    nn::Tape t;
    std::mt19937_64 rng2(5);
    auto s = dvae::sample_categorical(t, t.parameter(param), dvae::SampleMode::sample, 0.5, &rng2);
    Matrix c(4, 1);
    c << 1.0, 2.0, 3.0, 4.0;
    t.backward(nn::dot(s.selector, t.constant(c)));
    const double gnorm = param.grad().norm();
    o.require(gnorm > 0.0, "straight-through gradient is zero");
    o.detail = o.pass ? fmt("10k draws within %.2f sigma, ", worst_sigmas) + fmt("grad norm %.3g", gnorm) : o.detail;
    return o;
}

Outcome gcn() {
    Outcome o;
    const double tol = 1e-9;
    auto cycle = dvae::undirected_adjacency(2, {{0, 1}, {1, 0}});
    const double expected[] = {0.5, 0.6224593312018546, 0.6507776782147005};
    for (int layers = 1; layers <= 3; ++layers) {
        Matrix h = dvae::gcn_propagate(Matrix::Zero(2, 2), cycle, layers);
        o.require((h.array() - expected[layers - 1]).abs().maxCoeff() < tol,
                  "cycle layer " + std::to_string(layers));
    }
    Matrix h0(1, 3);
    h0 << 1.0, 2.0, 3.0;
    Matrix h = dvae::gcn_propagate(h0, dvae::undirected_adjacency(3, {{0, 1}, {1, 2}}), 3);
    o.require(std::abs(h(0, 0) - 0.7012818115707605) < tol && std::abs(h(0, 1) - 0.810769082538263) < tol &&
                  std::abs(h(0, 2) - 0.7012818115707605) < tol,
              "path values");

    std::mt19937_64 rng(3);
    double worst = 0.0;
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
        Matrix x = Matrix::Random(4, n);
        Matrix px(4, n);
        for (int v = 0; v < n; ++v) {
            px.col(perm[v]) = x.col(v);
        }
        Matrix out = dvae::gcn_propagate(x, dvae::undirected_adjacency(n, edges), 3);
        Matrix pout = dvae::gcn_propagate(px, dvae::undirected_adjacency(n, pedges), 3);
        for (int v = 0; v < n; ++v) {
            worst = std::max(worst, (out.col(v) - pout.col(perm[v])).cwiseAbs().maxCoeff());
        }
    }
    o.require(worst < 1e-12, fmt("equivariance error %.3g", worst));
    o.detail = o.pass ? fmt("hand values within 1e-9, equivariance error %.2g on 20 graphs", worst) : o.detail;
    return o;
}

// Shared by the recovery and training criteria: one training run on the
// planted chain corpus.
struct PlantedRun {
    synthetic::ChainCorpus chain;
    std::vector<dvae::EpochMetrics> history;
    metrics::ReconstructionReport before;
    metrics::ReconstructionReport after;
    graph::StructureGraph graph;
    double train_seconds = 0.0;
};

const PlantedRun& planted_run() {
    static std::unique_ptr<PlantedRun> run;
    if (run) {
        return *run;
    }
    run = std::make_unique<PlantedRun>();
    synthetic::ChainConfig cc;
    cc.sessions = 200;
    cc.states = 10;
    cc.seed = 1;
    run->chain = synthetic::generate_chain(cc);
    const auto& store = run->chain.store;
    auto vocab = corpus::build_vocab(store, 1000);
    auto extraction = phrases::extract_corpus(store, nullptr);
    auto ph = phrases::rank_and_bind(extraction, 1000).phrases;
    auto pg = phrases::build_phrase_graph(extraction, ph, 3);

    dvae::ModelConfig mc = testing::tiny_config(32, 10, 4);
    dvae::DvaeModel model(mc, vocab, ph, pg);
    run->before = metrics::reconstruction_eval(model, store);

    dvae::TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 16;
    tc.adam.lr = 1e-2;
    const auto t0 = Clock::now();
    run->history = dvae::train(model, store, tc);
    run->train_seconds = seconds_since(t0);
    run->after = metrics::reconstruction_eval(model, store);

    graph::Thresholds th;
    th.alpha_uu = 0.05;
    run->graph = graph::build_graph(graph::accumulate(graph::map_corpus(model, store)), th, ph, model.fingerprint());
    return *run;
}

Outcome planted_recovery() {
    Outcome o;
    const PlantedRun& r = planted_run();
    const auto& g = r.graph;
    size_t correct = 0;
    std::set<std::pair<int, int>> found;
    for (const auto& e : g.uu_edges()) {
        const int a = r.chain.state_of(g.phrase(e.from));
        const int b = r.chain.state_of(g.phrase(e.to));
        if (a >= 0 && b >= 0 && r.chain.transitions.contains({a, b})) {
            ++correct;
            found.insert({a, b});
        }
    }
    const double precision = g.uu_edges().empty() ? 0.0 : correct / static_cast<double>(g.uu_edges().size());
    const double recall = found.size() / static_cast<double>(r.chain.transitions.size());
    o.require(precision >= 0.8, fmt("precision %.3f", precision));
    o.require(recall >= 0.8, fmt("recall %.3f", recall));
    o.require(r.train_seconds <= 1800.0, fmt("training took %.0fs", r.train_seconds));
    o.detail = (o.pass ? "" : o.detail + "; ") + fmt("precision %.3f recall %.3f", precision, recall) + " over " +
               std::to_string(g.uu_edges().size()) + " edges, " + fmt("training %.1fs", r.train_seconds);
    return o;
}

Outcome training_smoke() {
    Outcome o;
    const PlantedRun& r = planted_run();
    const double first = r.history.front().nll_per_token;
    const double last = r.history.back().nll_per_token;
    o.require(r.history.size() == 10, "expected 10 epochs");
    o.require(last < 0.8 * first, fmt("epoch-10 NLL %.4f vs epoch-1 %.4f", last, first));
    o.require(r.after.bleu1 > r.before.bleu1, fmt("BLEU-1 %.4f after vs %.4f at init", r.after.bleu1, r.before.bleu1));
    o.detail = (o.pass ? "" : o.detail + "; ") + fmt("NLL/token %.4f -> %.4f, ", first, last) +
               fmt("BLEU-1 %.4f -> %.4f", r.before.bleu1, r.after.bleu1);
    return o;
}

Outcome reward_arithmetic() {
    Outcome o;
    gcs::RewardWeights w;
    o.require(w.relevance == 60.0 && w.closeness == 0.5 && w.repetition == -0.5, "default weights");
    o.require(gcs::weighted_total(w, 0.8, 0.5, 0) == 48.25, "0.8/0.5/0 != 48.25");
    o.require(gcs::weighted_total(w, 0.8, 0.5, 1) == 47.75, "0.8/0.5/1 != 47.75");
    o.require(gcs::weighted_total(w, 0.0, 1.0, 1) == 0.0, "0/1/1 != 0");
    // 3 of 5 tokens shared is exactly 60 percent: not repetitive; 4 of 5 is
    o.require(gcs::repetition_flag(toks("a b c d e"), {toks("a b c")}) == 0, "0.6 overlap flagged");
    o.require(gcs::repetition_flag(toks("a b c d e"), {toks("a b c d")}) == 1, "0.8 overlap not flagged");
    o.require(gcs::repetition_flag(toks("a b c d e f g h i j"), {toks("a b c d e f g")}) == 1, "0.7 not flagged");
    o.require(gcs::repetition_flag(toks("a b c d e f g h i j"), {toks("a b c d e f")}) == 0, "0.6 of 10 flagged");
    o.detail = o.pass ? "48.25 and 47.75 exact; flag off at 0.6, on above" : o.detail;
    return o;
}

Outcome bandit() {
    Outcome o;
    const auto t0 = Clock::now();
    std::string probs;
    for (std::uint64_t seed : {1, 2, 3}) {
        auto t = testing::bandit_toy(seed);
        auto parts = t->parts();
        parts.weights = testing::bandit_weights();
        gcs::ScriptedSimulator sim({toks("drink tea")});
        gcs::A2cConfig c;
        c.episodes = 2000;
        c.max_turns = 1;
        c.adam.lr = 1e-2;
        c.seed = seed;
        gcs::a2c_train(*t->policy, parts, sim, c);
        nn::Tape tape;
        gcs::RlState st;
        st.context = {toks("drink tea")};
        auto choice = t->policy->choose(tape, t->policy->encode_state(tape, st), gcs::CandidateLevel::utterance,
                                        {0, 1, 2}, dvae::SampleMode::argmax);
        const double p = choice.probs[0];
        probs += (probs.empty() ? "" : " ") + fmt("%.3f", p);
        o.require(p >= 0.9, "seed " + std::to_string(seed) + fmt(" best-arm probability %.3f", p));
    }
    const double secs = seconds_since(t0);
    o.require(secs < 300.0, fmt("took %.1fs", secs));
    o.detail = (o.pass ? "" : o.detail + "; ") + "best-arm probability " + probs + " after 2000 episodes, " +
               fmt("%.1fs", secs);
    return o;
}

Outcome episode_contract() {
    Outcome o;
    auto t = testing::gcs_toy({"go beach", "eat noodles", "drink tea"}, {{{0, 1, 2}, 0}, {{2, 1}, 1}}, 2);
    auto parts = t->parts();
    std::vector<corpus::TokenList> long_script;
    for (int i = 0; i < 30; ++i) {
        long_script.push_back(toks(i % 2 ? "go beach" : "drink tea"));
    }
    size_t longest = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        for (auto mode : {dvae::SampleMode::sample, dvae::SampleMode::argmax}) {
            gcs::EpisodeConfig c;
            c.mode = mode;
            c.seed = seed;
            gcs::ScriptedSimulator a(long_script);
            gcs::ScriptedSimulator b(long_script);
            auto ta = gcs::run_episode(parts, a, c);
            auto tb = gcs::run_episode(parts, b, c);
            longest = std::max(longest, ta.turns.size());
            o.require(ta.turns.size() <= 8, "episode with " + std::to_string(ta.turns.size()) + " turns");
            o.require(ta.to_json().dump() == tb.to_json().dump(), "replay differs at seed " + std::to_string(seed));
        }
    }
    o.detail = o.pass ? "40 rollouts, longest " + std::to_string(longest) + " turns, replays identical" : o.detail;
    return o;
}

Outcome metrics_checks() {
    Outcome o;
    o.require(metrics::bleu_n(toks("go to the beach"), toks("go to the beach"), 1) == 1.0, "identical BLEU-1 != 1");
    o.require(metrics::bleu_n(toks("go to the beach"), toks("eat some noodles now"), 1) == 0.0,
              "disjoint BLEU-1 != 0");
    o.require(std::abs(metrics::distinct_n({toks("a a a")}, 1) - 1.0 / 3.0) < 1e-15, "Dist-1(a a a) != 1/3");
    const std::vector<corpus::TokenList> dull{toks("i don't know")};
    std::vector<corpus::TokenList> d{toks("hi there"),      toks("where should we go"), toks("the beach is nice"),
                                     toks("i don't know"), toks("ok then"),            toks("see you")};
    o.require(metrics::hq_dialog_length(d, dull) == 4, "hq_length did not stop at the dull turn");
    d[3] = toks("maybe the museum");
    o.require(metrics::hq_dialog_length(d, dull) == d.size(), "hq_length truncated a clean dialog");
    o.detail = o.pass ? "BLEU-1 1.0/0.0, Dist-1 1/3, hq_length 4 with dull turn 4 of 6" : o.detail;
    return o;
}

Outcome service() {
    Outcome o;
    auto t = testing::service_toy();
    std::mutex model_mutex;
    auto parts = t->parts();
    parts.model_mutex = &model_mutex;
    chat::ChatService svc(parts);
    const std::vector<std::string> texts{"go beach", "eat noodles", "drink tea", "visit museum",
                                         "buy shoes", "go beach",    "drink tea", "eat noodles"};
    auto body = [](const std::string& text) { return json{{"text", text}}.dump(); };

    const std::string id = svc.create_session().body.at("session_id");
    for (size_t i = 0; i < 8; ++i) {
        auto r = svc.message(id, body(texts[i]));
        o.require(r.status == 200, "message " + std::to_string(i + 1) + " status " + std::to_string(r.status));
        if (r.status != 200) {
            break;
        }
        for (const char* f : {"response", "goal_id", "goal_terms", "vertex_id", "vertex_phrase", "reward_breakdown"}) {
            o.require(r.body.contains(f), std::string("missing ") + f);
        }
        for (const char* f : {"relevance", "closeness", "repetition", "weighted_total"}) {
            o.require(r.body.at("reward_breakdown").contains(f), std::string("missing reward ") + f);
        }
    }
    const int ninth = svc.message(id, body("go beach")).status;
    o.require(ninth == 409, "9th message status " + std::to_string(ninth));

    // sequential reference, then the same scripts interleaved across threads
    const size_t n = 4;
    std::vector<std::vector<json>> expected(n);
    for (size_t s = 0; s < n; ++s) {
        const std::string sid = svc.create_session().body.at("session_id");
        for (size_t i = 0; i < 8; ++i) {
            expected[s].push_back(svc.message(sid, body(texts[(i + s) % texts.size()])).body);
        }
    }
    std::vector<std::string> ids;
    for (size_t s = 0; s < n; ++s) {
        ids.push_back(svc.create_session().body.at("session_id"));
    }
    std::vector<std::vector<json>> got(n);
    std::vector<std::thread> workers;
    for (size_t s = 0; s < n; ++s) {
        workers.emplace_back([&, s] {
            for (size_t i = 0; i < 8; ++i) {
                got[s].push_back(svc.message(ids[s], body(texts[(i + s) % texts.size()])).body);
                std::this_thread::yield();
            }
        });
    }
    for (auto& w : workers) {
        w.join();
    }
    o.require(got == expected, "interleaved sessions diverged from sequential replies");
    o.detail = o.pass ? "8 turns then 409, trace fields every turn, 4 interleaved sessions match" : o.detail;
    return o;
}

struct Criterion {
    int number;
    const char* name;
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "KL decomposition identity", kl_identity},
        {2, "graph builder oracle equivalence", graph_oracle},
        {3, "ELBO gradient check", gradient_check},
        {4, "gumbel-softmax sampling", gumbel},
        {5, "GCN propagation", gcn},
        {6, "planted structure recovery", planted_recovery},
        {7, "training smoke", training_smoke},
        {8, "reward arithmetic", reward_arithmetic},
        {9, "A2C bandit", bandit},
        {10, "episode contract", episode_contract},
        {11, "metrics", metrics_checks},
        {12, "chat service", service},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        only.insert(std::atoi(argv[i]));
    }
    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.contains(c.number)) {
            continue;
        }
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("threw: ") + e.what();
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.number << "] " << c.name << ": " << o.detail
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
