#include "atlas/synthetic.hpp"

#include <random>
#include <stdexcept>

namespace atlas::synthetic {

namespace {

const char* const kVerbs[] = {"go", "eat", "drink", "visit", "watch", "play", "read", "buy", "cook", "climb",
                              "paint", "bake", "swim", "sing", "plant", "rent"};
const char* const kObjects[] = {"beach", "noodles", "tea", "museum", "movie", "chess", "novel", "shoes", "dinner",
                                "tower", "fence", "bread", "lake", "song", "roses", "bikes"};

} // namespace

int ChainCorpus::state_of(const corpus::TokenList& tokens) const {
    for (const auto& t : tokens) {
        for (size_t s = 0; s < verbs.size(); ++s) {
            if (t == verbs[s]) {
                return static_cast<int>(s);
            }
        }
    }
    return -1;
}

ChainCorpus generate_chain(const ChainConfig& config) {
    const size_t S = config.states;
    if (S < 4 || S > std::size(kVerbs)) {
        throw std::invalid_argument("states must be in [4, " + std::to_string(std::size(kVerbs)) + "]");
    }
    if (config.min_turns < 2 || config.max_turns < config.min_turns) {
        throw std::invalid_argument("invalid turn range");
    }
    ChainCorpus out;
    for (size_t s = 0; s < S; ++s) {
        out.verbs.emplace_back(kVerbs[s]);
        out.objects.emplace_back(kObjects[s]);
        out.transitions.emplace(static_cast<int>(s), static_cast<int>((s + 1) % S));
        out.transitions.emplace(static_cast<int>(s), static_cast<int>((s + 3) % S));
    }
    out.fillers = {"well", "ok", "so"};

    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<size_t> start(0, S - 1);
    std::uniform_int_distribution<size_t> turns(config.min_turns, config.max_turns);
    std::uniform_int_distribution<size_t> filler(0, out.fillers.size() - 1);
    std::bernoulli_distribution use_filler(config.filler_prob);
    std::bernoulli_distribution major(config.major);

    std::vector<corpus::DialogSession> sessions;
    for (size_t i = 0; i < config.sessions; ++i) {
        corpus::DialogSession d;
        d.session_id = "chain-" + std::to_string(i);
        std::vector<int> seq;
        size_t s = start(rng);
        const size_t len = turns(rng);
        for (size_t t = 0; t < len; ++t) {
            seq.push_back(static_cast<int>(s));
            corpus::TokenList toks;
            if (use_filler(rng)) {
                toks.push_back(out.fillers[filler(rng)]);
            }
            toks.push_back(out.verbs[s]);
            toks.push_back(out.objects[s]);
            d.utterances.push_back({toks, corpus::detokenize(toks)});
            s = major(rng) ? (s + 1) % S : (s + 3) % S;
        }
        out.states.push_back(std::move(seq));
        sessions.push_back(std::move(d));
    }
    out.store = corpus::SessionStore(std::move(sessions), 0);
    return out;
}

} // namespace atlas::synthetic
