#pragma once

#include "atlas/corpus.hpp"

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace atlas::synthetic {

/// Dialogs generated from a first-order chain over a few latent states. Each
/// state owns one verb and one object; an utterance is "[filler] verb object".
struct ChainConfig {
    size_t sessions = 200;
    size_t states = 10;
    size_t min_turns = 4;
    size_t max_turns = 8;
    double filler_prob = 0.5;
    /// Successors of state s are s+1 (probability `major`) and s+3 (mod S).
    double major = 0.7;
    std::uint64_t seed = 1;
};

struct ChainCorpus {
    corpus::SessionStore store;
    std::vector<std::string> verbs;   // per state
    std::vector<std::string> objects; // per state
    std::vector<std::string> fillers;
    std::set<std::pair<int, int>> transitions; // planted (from, to) state pairs
    std::vector<std::vector<int>> states;      // state sequence per session

    /// State whose verb occurs in `tokens`, or -1.
    int state_of(const corpus::TokenList& tokens) const;
};

ChainCorpus generate_chain(const ChainConfig& config);

} // namespace atlas::synthetic
