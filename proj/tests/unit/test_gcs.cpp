#include "atlas/gcs/a2c.hpp"
#include "atlas/gcs/agent.hpp"

#include "../support/gcs_toy.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

using namespace atlas;
using namespace atlas::gcs;
using atlas::testing::gcs_toy;

namespace {

TokenList toks(const std::string& s) { return corpus::tokenize(s); }

RlState state_with(std::vector<TokenList> context) {
    RlState s;
    s.context = std::move(context);
    return s;
}

class ThrowingScorer : public RelevanceScorer {
public:
    double score(const std::vector<TokenList>&, const TokenList&) const override {
        throw std::runtime_error("scorer down");
    }
};

class FailingSimulator : public Simulator {
public:
    TokenList open(std::uint64_t) override { return toks("go beach"); }
    SimulatorReply respond(const std::vector<TokenList>& dialog) override {
        if (dialog.size() >= 4) {
            throw std::runtime_error("simulator crashed");
        }
        return {toks("eat noodles"), false};
    }
};

} // namespace

TEST_CASE("reward arithmetic") {
    RewardWeights w;
    CHECK(weighted_total(w, 0.8, 0.5, 0) == 48.25);
    CHECK(weighted_total(w, 0.8, 0.5, 1) == 47.75);
    // exactly linear in relevance
    CHECK(weighted_total(w, 0.4, 0.3, 1) - weighted_total(w, 0.2, 0.3, 1) == doctest::Approx(60 * 0.2));
    auto p = RewardWeights::parse("60,0.5,-0.5");
    CHECK(p.relevance == 60.0);
    CHECK(p.closeness == 0.5);
    CHECK(p.repetition == -0.5);
    CHECK_THROWS(RewardWeights::parse("1,2"));
    CHECK_THROWS(RewardWeights::parse("1,x,2"));
}

TEST_CASE("repetition flag flips above 60 percent") {
    CHECK(repetition_flag(toks("go to beach"), {toks("i go beach")}) == 1); // 2/3
    CHECK(repetition_flag(toks("a b c d e"), {toks("a b c")}) == 0);       // 3/5 = 0.6
    CHECK(repetition_flag(toks("a b c d e"), {toks("a b c d")}) == 1);     // 4/5
    CHECK(repetition_flag(toks("go beach"), {toks("eat tea"), toks("drink")}) == 0);
    // per single utterance, not pooled over the context
    CHECK(repetition_flag(toks("a b c"), {toks("a"), toks("b c")}) == 1);
    CHECK(repetition_flag(toks("a b c d"), {toks("a b"), toks("c d")}) == 0);
    CHECK(repetition_overlap(toks("a a b"), toks("a b")) == doctest::Approx(2.0 / 3.0));
    CHECK(repetition_overlap({}, toks("a")) == 0.0);
}

TEST_CASE("compute_reward combines scorer, closeness and repetition") {
    auto t = gcs_toy({"go beach", "eat noodles", "drink tea"}, {{{0, 1}, 0}, {{0, 2}, 1}}, 2);
    FunctionScorer fixed([](const auto&, const auto&) { return 0.8; });
    std::vector<TokenList> ctx{toks("hello"), toks("nice go beach")};
    TokenList resp = toks("go beach now");
    TokenList phrase = toks("go beach");
    RewardBreakdown r = compute_reward({ctx, resp, phrase, 0, 0}, t->graph, fixed, RewardWeights{});
    CHECK(r.relevance == 0.8);
    CHECK(r.closeness == doctest::Approx(0.5));
    CHECK(r.repetition == 1);
    CHECK(r.weighted_total == doctest::Approx(48.0 + 0.25 - 0.5));
    // repetition on the response instead of the phrase: 2/3 of "go beach now" is in the context
    RewardBreakdown rr =
        compute_reward({ctx, resp, phrase, 0, 0}, t->graph, fixed, RewardWeights{}, RepetitionTarget::response);
    CHECK(rr.repetition == 1);
    ThrowingScorer bad;
    RewardBreakdown f = compute_reward({ctx, resp, phrase, 0, 0}, t->graph, bad, RewardWeights{});
    CHECK(f.scorer_failed);
    CHECK(f.relevance == 0.0);
    FunctionScorer out_of_range([](const auto&, const auto&) { return 1.5; });
    CHECK(compute_reward({ctx, resp, phrase, 0, 0}, t->graph, out_of_range, RewardWeights{}).scorer_failed);
}

TEST_CASE("goal rewards average over segments") {
    CHECK(assign_goal_reward({4, 4}, {10, 20}) == std::vector<double>{15, 15});
    CHECK(assign_goal_reward({7}, {3}) == std::vector<double>{3});
    // hand split: [1 1] [2] [1 1 1]
    auto r = assign_goal_reward({1, 1, 2, 1, 1, 1}, {2, 4, 9, 1, 2, 3});
    CHECK(r == std::vector<double>{3, 3, 9, 2, 2, 2});
    CHECK_THROWS(assign_goal_reward({1}, {}));
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> goals;
        std::uniform_int_distribution<int> g(0, 2);
        for (int i = 0; i < 8; ++i) {
            goals.push_back(g(rng));
        }
        auto segs = goal_segments(goals);
        std::vector<int> rebuilt;
        for (const auto& [b, e] : segs) {
            CHECK(b < e);
            for (size_t i = b; i < e; ++i) {
                CHECK(goals[i] == goals[b]);
                rebuilt.push_back(goals[i]);
            }
            if (e < goals.size()) {
                CHECK(goals[e] != goals[b]);
            }
        }
        CHECK(rebuilt == goals);
    }
}

TEST_CASE("state encoding blocks") {
    auto t = gcs_toy({"go beach", "eat noodles", "drink tea"}, {{{0, 1, 2}, 0}}, 2);
    nn::Tape tape;
    RlState s = state_with({toks("go beach")});
    auto blocks = t->policy->encode_blocks(tape, s);
    REQUIRE(blocks.size() == 3);
    CHECK(blocks[0].value().norm() > 0.0);
    CHECK(blocks[1].value().isZero());
    CHECK(blocks[2].value().isZero());
    CHECK(t->policy->encode_state(tape, s).rows() == t->policy->state_dim());

    RlState later = s;
    later.goal_history = {1, 0};
    later.utter_history = {2, 1};
    later.turn_index = 2;
    CHECK(t->policy->encode_state(tape, later).rows() == t->policy->state_dim());

    RlState other = later;
    other.goal_history = {0, 0};
    auto a = t->policy->encode_blocks(tape, later);
    auto b = t->policy->encode_blocks(tape, other);
    CHECK(a[0].value() == b[0].value());
    CHECK(a[2].value() == b[2].value());
    CHECK(a[1].value() != b[1].value());
}

TEST_CASE("policy distributions") {
    auto t = gcs_toy({"go beach", "eat noodles", "drink tea"}, {{{0, 1, 2}, 0}}, 3);
    nn::Tape tape;
    Var st = t->policy->encode_state(tape, state_with({toks("eat noodles")}));
    for (auto level : {CandidateLevel::session, CandidateLevel::utterance}) {
        auto one = t->policy->choose(tape, st, level, {1}, dvae::SampleMode::argmax);
        CHECK(one.probs.size() == 1);
        CHECK(one.probs[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(one.id == 1);
        auto all = t->policy->choose(tape, st, level, {2, 0, 1}, dvae::SampleMode::argmax);
        CHECK(all.probs.size() == 3);
        CHECK(all.probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK((all.probs.array() >= 0).all());
        // argmax is invariant under positive rescaling of the state
        for (double k : {0.1, 3.7, 40.0}) {
            CHECK(t->policy->choose(tape, nn::scale(st, k), level, {2, 0, 1}, dvae::SampleMode::argmax).id == all.id);
        }
        // samples stay inside the candidate set
        std::mt19937_64 rng(9);
        std::map<int, int> seen;
        for (int i = 0; i < 10000; ++i) {
            ++seen[t->policy->choose(tape, st, level, {2, 0}, dvae::SampleMode::sample, &rng).id];
        }
        for (const auto& [id, c] : seen) {
            CHECK((id == 2 || id == 0));
        }
        CHECK_THROWS(t->policy->choose(tape, st, level, {}, dvae::SampleMode::argmax));
    }
    // identical candidate embeddings give equal logits
    nn::Matrix same = nn::Matrix::Ones(8, 3);
    Policy flat(PolicyConfig{}, t->vocab, same, same);
    nn::Tape tape2;
    Var s2 = flat.encode_state(tape2, state_with({toks("go")}));
    auto eq = flat.choose(tape2, s2, CandidateLevel::session, {0, 1, 2}, dvae::SampleMode::argmax);
    for (int i = 0; i < 3; ++i) {
        CHECK(eq.probs[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("context understanding") {
    auto t = gcs_toy({"go beach", "eat noodles", "drink tea", "visit museum"}, {{{0, 1, 2}, 0}}, 1, 1, 1,
                     {"hello", "zzz"});
    SUBCASE("a vertex phrase maps to that vertex") {
        // only document 1 contains "eat" or "noodles", so BM25 ranks it alone
        CHECK(t->model->index().ranked(toks("eat noodles")).size() == 1);
        ContextHit h = understand_context({toks("eat noodles")}, *t->model, t->frozen, t->graph);
        CHECK(h.vertex == 1);
        CHECK(h.fallback == 0);
        ContextHit again = understand_context({toks("eat noodles")}, *t->model, t->frozen, t->graph);
        CHECK(again.vertex == h.vertex);
    }
    SUBCASE("vertices missing from the graph are skipped") {
        // "visit museum" (vertex 3) never occurs in the assignments
        ContextHit h = understand_context({toks("visit museum tea")}, *t->model, t->frozen, t->graph);
        CHECK(h.vertex == 2);
        CHECK(h.fallback == 1);
    }
    SUBCASE("off-vocabulary last utterance falls back to the whole context") {
        ContextHit h = understand_context({toks("drink tea"), toks("zzz hello")}, *t->model, t->frozen, t->graph);
        CHECK(h.vertex == 2);
        CHECK(h.fallback == 2);
    }
    SUBCASE("nothing in common is unmappable") {
        CHECK_THROWS_AS(understand_context({toks("zzz hello")}, *t->model, t->frozen, t->graph), UnmappableContext);
        CHECK_THROWS_AS(understand_context({}, *t->model, t->frozen, t->graph), UnmappableContext);
        CHECK_THROWS_AS(understand_context({{}}, *t->model, t->frozen, t->graph), UnmappableContext);
    }
}

TEST_CASE("turn fallbacks and goal pinning") {
    // vertex 3 appears only in sessions of goal 1, vertex 0 in goal 0 and 1
    auto t = gcs_toy({"go beach", "eat noodles", "drink tea", "visit museum"},
                     {{{0, 1}, 0}, {{0, 3}, 1}, {{0, 1}, 0}}, 3, 1);
    auto parts = t->parts();
    nn::Tape tape;
    SUBCASE("policy picks among parents") {
        TurnTrace tr = take_turn(tape, parts, state_with({toks("go beach")}));
        CHECK(tr.decision.hit.vertex == 0);
        CHECK(tr.decision.goal_candidates == t->graph.parents(0));
        CHECK(tr.decision.goal_source == "policy");
        CHECK(tr.goal_decided);
        auto kids = t->graph.children(tr.decision.goal);
        CHECK(std::find(kids.begin(), kids.end(), tr.decision.vertex) != kids.end());
        CHECK(tr.decision.response == t->graph.phrase(tr.decision.vertex));
    }
    SUBCASE("a valid pin forces the goal") {
        for (int pin : {0, 1}) {
            TurnOptions o;
            o.goal_override = pin;
            TurnTrace tr = take_turn(tape, parts, state_with({toks("go beach")}), o);
            CHECK(tr.decision.goal == pin);
            CHECK(tr.decision.goal_source == "pinned");
            CHECK_FALSE(tr.goal_decided);
        }
    }
    SUBCASE("a pin outside the parents is rejected") {
        TurnOptions o;
        o.goal_override = 2;
        CHECK_THROWS_AS(take_turn(tape, parts, state_with({toks("go beach")}), o), InvalidGoalOverride);
        o.goal_override = 0;
        // vertex 3 has parent goal 1 only
        CHECK_THROWS_AS(take_turn(tape, parts, state_with({toks("visit museum")}), o), InvalidGoalOverride);
    }
}

TEST_CASE("empty parent and child sets") {
    // vertex 1 is split evenly over both goals, so alpha_su 0.6 drops both parents
    const std::vector<graph::SessionAssignment> split{{{0, 0, 0, 0, 1}, 0}, {{0, 2, 1}, 1}, {{0}, 1}};
    auto t = gcs_toy({"go beach", "eat noodles", "drink tea"}, split, 2, 1);
    graph::Thresholds th;
    th.alpha_su = 0.6;
    t->graph = graph::build_graph(graph::accumulate(split), th, t->phrases);
    REQUIRE(t->graph.parents(1).empty());
    auto parts = t->parts();
    nn::Tape tape;
    RlState s = state_with({toks("eat noodles")});
    // turn 1: most frequent goal (goal 1 has two sessions)
    TurnTrace first = take_turn(tape, parts, s);
    CHECK(first.decision.goal_source == "kept");
    CHECK(first.decision.goal == 1);
    // later: previous goal retained
    s.goal_history = {0};
    CHECK(take_turn(tape, parts, s).decision.goal == 0);

    // goal with no children: successors of the hit, then the hit itself
    graph::Thresholds strict;
    strict.alpha_su = 0.99;
    t->graph = graph::build_graph(graph::accumulate({{{1, 2}, 0}, {{1, 0}, 0}, {{2, 1, 0}, 1}}), strict, t->phrases);
    REQUIRE(t->graph.children(0).empty());
    RlState k = state_with({toks("eat noodles")});
    k.goal_history = {0};
    TurnTrace tr = take_turn(tape, parts, k);
    CHECK(tr.decision.utter_source == "successors");
    CHECK(tr.decision.utter_candidates == t->graph.successors(1));
    RlState h = state_with({toks("go beach")});
    h.goal_history = {0};
    TurnTrace self = take_turn(tape, parts, h);
    CHECK(self.decision.utter_source == "hit");
    CHECK(self.decision.vertex == 0);
}

TEST_CASE("episode contract") {
    auto t = gcs_toy({"go beach", "eat noodles", "drink tea"}, {{{0, 1, 2}, 0}, {{2, 1}, 1}}, 2);
    auto parts = t->parts();
    SUBCASE("a fixed-line simulator runs exactly eight turns") {
        ScriptedSimulator sim({toks("eat noodles please")});
        Trajectory tr = run_episode(parts, sim, {});
        CHECK(tr.turns.size() == 8);
        CHECK_FALSE(tr.terminal);
        CHECK_FALSE(tr.error);
        CHECK(tr.dialog.size() == 16);
        for (size_t l = 0; l < tr.turns.size(); ++l) {
            const RlState& s = tr.turns[l].state;
            CHECK(s.turn_index == l);
            CHECK(s.goal_history.size() == l);
            for (size_t i = 0; i < l; ++i) {
                CHECK(s.goal_history[i] == tr.turns[i].decision.goal);
                CHECK(s.utter_history[i] == tr.turns[i].decision.vertex);
            }
            CHECK(s.context.size() == (l == 0 ? 1u : 2u));
        }
    }
    SUBCASE("simulator termination ends the episode") {
        ScriptedSimulator sim({toks("go beach"), toks("eat noodles"), toks("drink tea"), {ScriptedSimulator::kEnd}});
        Trajectory tr = run_episode(parts, sim, {});
        CHECK(tr.turns.size() == 3);
        CHECK(tr.terminal);
    }
    SUBCASE("fixed seeds replay identically") {
        ScriptedSimulator a({toks("go beach"), toks("drink tea")});
        ScriptedSimulator b({toks("go beach"), toks("drink tea")});
        EpisodeConfig c;
        c.mode = dvae::SampleMode::sample;
        c.seed = 42;
        CHECK(run_episode(parts, a, c).to_json().dump() == run_episode(parts, b, c).to_json().dump());
    }
    SUBCASE("component failure truncates with an error") {
        FailingSimulator sim;
        Trajectory tr = run_episode(parts, sim, {});
        CHECK(tr.error.has_value());
        CHECK(tr.turns.size() == 2);
    }
    SUBCASE("max turns bound") {
        ScriptedSimulator sim({toks("go beach")});
        EpisodeConfig c;
        c.max_turns = 3;
        CHECK(run_episode(parts, sim, c).turns.size() == 3);
    }
}

TEST_CASE("a2c learns the one-step bandit") {
    auto t = testing::bandit_toy(1);
    auto parts = t->parts();
    parts.weights = testing::bandit_weights();
    ScriptedSimulator sim({toks("drink tea")});
    A2cConfig c;
    c.episodes = 600;
    c.max_turns = 1;
    c.adam.lr = 1e-2;
    auto stats = a2c_train(*t->policy, parts, sim, c);
    nn::Tape tape;
    Var st = t->policy->encode_state(tape, state_with({toks("drink tea")}));
    auto choice = t->policy->choose(tape, st, CandidateLevel::utterance, {0, 1, 2}, dvae::SampleMode::argmax);
    CHECK(choice.probs[0] > 0.9);
    auto mean_entropy = [&](size_t from, size_t to) {
        double s = 0;
        for (size_t i = from; i < to; ++i) {
            s += stats[i].utter_entropy;
        }
        return s / static_cast<double>(to - from);
    };
    CHECK(mean_entropy(500, 600) < mean_entropy(0, 100));
}

TEST_CASE("a2c credits the session policy with segment rewards") {
    // hit vertex 0 has parents 0 and 1; only goal 0 leads to the rewarded vertex 1
    auto t = gcs_toy({"go beach", "eat noodles", "drink tea"}, {{{0, 1}, 0}, {{0, 2}, 1}}, 2, 1, 4);
    const TokenList good = t->phrases[1].tokens;
    t->scorer = std::make_unique<FunctionScorer>(
        [good](const auto&, const TokenList& r) { return r == good ? 1.0 : 0.0; });
    auto parts = t->parts();
    parts.weights = {1.0, 0.0, 0.0};
    ScriptedSimulator sim({toks("go beach")});
    A2cConfig c;
    c.episodes = 800;
    c.max_turns = 1;
    c.adam.lr = 1e-2;
    auto stats = a2c_train(*t->policy, parts, sim, c);
    nn::Tape tape;
    Var st = t->policy->encode_state(tape, state_with({toks("go beach")}));
    auto g = t->policy->choose(tape, st, CandidateLevel::session, {0, 1}, dvae::SampleMode::argmax);
    CHECK(g.probs[0] > 0.9);
    double early = 0;
    double late = 0;
    for (size_t i = 0; i < 100; ++i) {
        early += stats[i].goal_entropy;
        late += stats[stats.size() - 1 - i].goal_entropy;
    }
    CHECK(late < early);
}

TEST_CASE("policy training leaves the structure model and generator untouched") {
    auto w = testing::toy_world(20, 3);
    dvae::DvaeModel model(testing::tiny_config(), w.vocab, w.phrases, w.phrase_graph);
    auto frozen = model.freeze_vertices();
    auto a = graph::map_corpus(model, w.chain.store);
    graph::StructureGraph g = graph::build_graph(graph::accumulate(a), graph::Thresholds{}, model.phrases());
    generation::GeneratorConfig gc;
    gc.embed_dim = 8;
    gc.hidden_dim = 8;
    gc.max_len = 6;
    generation::Generator gen(gc, w.vocab);
    PolicyConfig pc;
    pc.embed_dim = 8;
    pc.hidden_dim = 8;
    Policy policy(pc, model);
    FunctionScorer scorer([](const auto&, const auto&) { return 0.3; });
    AgentParts parts;
    parts.model = &model;
    parts.frozen = &frozen;
    parts.graph = &g;
    parts.generator = &gen;
    parts.scorer = &scorer;
    const std::string model_fp = model.fingerprint();
    const std::string gen_fp = gen.fingerprint();
    const std::string policy_fp = policy.fingerprint();
    RetrievalSimulator sim(w.chain.store);
    A2cConfig c;
    c.episodes = 5;
    auto dir = std::filesystem::temp_directory_path() / "atlas_policy_ckpt";
    std::filesystem::remove_all(dir);
    c.out_dir = dir;
    auto stats = a2c_train(policy, parts, sim, c);
    CHECK(stats.size() == 5);
    CHECK(model.fingerprint() == model_fp);
    CHECK(gen.fingerprint() == gen_fp);
    CHECK(policy.fingerprint() != policy_fp);

    Policy loaded = Policy::load(dir, model);
    CHECK(loaded.fingerprint() == policy.fingerprint());
    std::ifstream curves(dir / "curves.jsonl");
    size_t lines = 0;
    for (std::string l; std::getline(curves, l);) {
        ++lines;
    }
    CHECK(lines == 5);
}

TEST_CASE("simulators") {
    SUBCASE("scripted from file") {
        auto path = std::filesystem::temp_directory_path() / "atlas_script.txt";
        std::ofstream(path) << "go to the beach\n\nsounds good\n<end>\n";
        ScriptedSimulator s = ScriptedSimulator::from_file(path);
        CHECK(s.open(1) == toks("go to the beach"));
        CHECK(s.respond({}).text == toks("sounds good"));
        CHECK(s.respond({}).terminate);
        CHECK_THROWS(ScriptedSimulator({}));
        CHECK_THROWS(make_simulator("bogus", nullptr));
        CHECK_THROWS(make_simulator("retrieval", nullptr));
        CHECK(make_simulator("scripted:" + path.string(), nullptr) != nullptr);
    }
    SUBCASE("retrieval answers with the corpus successor") {
        std::istringstream in("{\"id\":\"a\",\"utterances\":[\"hi there\",\"go beach now\",\"sounds fun\"]}\n"
                              "{\"id\":\"b\",\"utterances\":[\"eat noodles\",\"drink tea\"]}\n");
        auto store = corpus::ingest_stream(in, corpus::Format::jsonl);
        RetrievalSimulator sim(store);
        TokenList o1 = sim.open(5);
        CHECK((o1 == toks("hi there") || o1 == toks("eat noodles")));
        CHECK(sim.open(5) == o1);
        CHECK(sim.respond({toks("beach")}).text == toks("sounds fun"));
        CHECK(sim.respond({toks("noodles")}).text == toks("drink tea"));
        auto fallback = sim.respond({toks("qqq")});
        CHECK_FALSE(fallback.terminate);
        CHECK_FALSE(fallback.text.empty());
    }
}

TEST_CASE("dual-encoder relevance scorer") {
    auto w = testing::toy_world(80, 11);
    DualEncoderConfig c;
    c.dim = 16;
    c.epochs = 8;
    c.adam.lr = 1e-2;
    DualEncoderScorer s(c, w.vocab);
    auto losses = s.train(w.chain.store);
    CHECK(losses.back() < losses.front());
    // true successors outscore shuffled ones on average
    std::mt19937_64 rng(3);
    double pos = 0;
    double neg = 0;
    size_t n = 0;
    const auto& sessions = w.chain.store.sessions();
    std::uniform_int_distribution<size_t> pick(0, sessions.size() - 1);
    for (const auto& sess : sessions) {
        for (size_t i = 1; i < sess.utterances.size(); ++i) {
            const double a = s.score({sess.utterances[i - 1].tokens}, sess.utterances[i].tokens);
            const auto& other = sessions[pick(rng)].utterances.front().tokens;
            const double b = s.score({sess.utterances[i - 1].tokens}, other);
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
            pos += a;
            neg += b;
            ++n;
        }
    }
    CHECK(pos / double(n) > neg / double(n));
    auto dir = std::filesystem::temp_directory_path() / "atlas_scorer";
    s.save(dir);
    auto loaded = DualEncoderScorer::load(dir);
    CHECK(loaded.score({toks("go beach")}, toks("eat noodles")) == s.score({toks("go beach")}, toks("eat noodles")));
}
