#pragma once

#include "atlas/gcs/a2c.hpp"
#include "atlas/gcs/agent.hpp"

#include "toy.hpp"

#include <memory>
#include <set>

namespace atlas::testing {

// Tiny structure model plus a hand-specified graph for policy tests.
struct GcsToy {
    corpus::Vocab vocab;
    std::vector<phrases::Phrase> phrases;
    std::unique_ptr<dvae::DvaeModel> model;
    dvae::FrozenVertices frozen;
    graph::StructureGraph graph;
    std::unique_ptr<gcs::Policy> policy;
    std::unique_ptr<gcs::RelevanceScorer> scorer;

    gcs::AgentParts parts() {
        gcs::AgentParts p;
        p.model = model.get();
        p.frozen = &frozen;
        p.graph = &graph;
        p.policy = policy.get();
        p.scorer = scorer.get();
        return p;
    }
};

inline std::unique_ptr<GcsToy> gcs_toy(const std::vector<std::string>& phrase_texts,
                                       const std::vector<graph::SessionAssignment>& assignments, int goals,
                                       int shortlist_k = 4, std::uint64_t policy_seed = 1,
                                       const std::vector<std::string>& extra_words = {}) {
    auto t = std::make_unique<GcsToy>();
    std::set<std::string> words(extra_words.begin(), extra_words.end());
    for (size_t i = 0; i < phrase_texts.size(); ++i) {
        auto toks = corpus::tokenize(phrase_texts[i]);
        words.insert(toks.begin(), toks.end());
        t->phrases.push_back({static_cast<int>(i), toks, phrase_texts.size() - i});
    }
    t->vocab = corpus::Vocab::from_tokens({words.begin(), words.end()});
    phrases::PhraseGraph pg;
    pg.vertex_count = t->phrases.size();
    t->model = std::make_unique<dvae::DvaeModel>(tiny_config(8, goals, shortlist_k), t->vocab, t->phrases, pg);
    t->frozen = t->model->freeze_vertices();
    t->graph = graph::build_graph(graph::accumulate(assignments), graph::Thresholds{}, t->phrases);
    gcs::PolicyConfig pc;
    pc.embed_dim = 8;
    pc.hidden_dim = 8;
    pc.seed = policy_seed;
    t->policy = std::make_unique<gcs::Policy>(pc, *t->model);
    t->scorer = std::make_unique<gcs::FunctionScorer>([](const auto&, const auto&) { return 0.5; });
    return t;
}

// One goal whose three children are the only vertices; the reward is 1 for
// vertex 0 and 0 otherwise.
inline std::unique_ptr<GcsToy> bandit_toy(std::uint64_t seed) {
    auto t = gcs_toy({"go beach", "eat noodles", "drink tea"}, {{{0, 1, 2}, 0}}, 1, 4, seed);
    const corpus::TokenList best = t->phrases[0].tokens;
    t->scorer = std::make_unique<gcs::FunctionScorer>(
        [best](const auto&, const corpus::TokenList& response) { return response == best ? 1.0 : 0.0; });
    return t;
}

// Five vertices over two goals; "go beach" has both goals as parents. A
// one-element shortlist makes every mapping the BM25 best match.
inline std::unique_ptr<GcsToy> service_toy() {
    return gcs_toy({"go beach", "eat noodles", "drink tea", "visit museum", "buy shoes"},
                   {{{0, 1, 2}, 0}, {{0, 3, 4}, 1}, {{1, 2, 0}, 0}, {{3, 4}, 1}}, 2, 1, 1, {"hello", "zzz", "qqq"});
}

inline gcs::RewardWeights bandit_weights() { return {1.0, 0.0, 0.0}; }

} // namespace atlas::testing
