#pragma once

#include "atlas/dvae/model.hpp"
#include "atlas/gcs/policy.hpp"
#include "atlas/gcs/reward.hpp"
#include "atlas/gcs/simulator.hpp"
#include "atlas/generation.hpp"
#include "atlas/graph.hpp"

#include <nlohmann/json.hpp>

#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace atlas::gcs {

class UnmappableContext : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidGoalOverride : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ContextHit {
    int vertex = 0;
    /// 0: recognized over the shortlist; 1: best BM25 graph vertex for the
    /// last utterance; 2: best BM25 graph vertex for the whole context.
    int fallback = 0;
};

/// Argmax recognition of the last utterance over its BM25 shortlist restricted
/// to graph vertices, with the fallbacks listed in ContextHit. Throws
/// UnmappableContext when no graph vertex shares a term with the context.
ContextHit understand_context(const std::vector<TokenList>& context, dvae::DvaeModel& model,
                              const dvae::FrozenVertices& frozen, const graph::StructureGraph& graph);

/// Everything an agent turn needs. The model, graph, generator and scorer are
/// read-only here. Without a generator the reply is the chosen vertex phrase.
struct AgentParts {
    dvae::DvaeModel* model = nullptr;
    const dvae::FrozenVertices* frozen = nullptr;
    const graph::StructureGraph* graph = nullptr;
    const Policy* policy = nullptr;
    const generation::Generator* generator = nullptr;
    const RelevanceScorer* scorer = nullptr;
    RewardWeights weights;
    RepetitionTarget repetition = RepetitionTarget::phrase;
    generation::Decode decode = generation::Decode::greedy();
    /// Serializes access to the structure model when parts are shared.
    std::mutex* model_mutex = nullptr;
};

struct TurnDecision {
    ContextHit hit;
    std::vector<int> goal_candidates; // parents of the hit vertex (or the pin)
    Vector goal_probs;
    int goal = 0;
    /// How the goal was set: "policy", "kept" (no parents), "pinned".
    std::string goal_source;
    std::vector<int> utter_candidates;
    Vector utter_probs;
    /// "children", "successors" or "hit" depending on which fallback supplied candidates.
    std::string utter_source;
    int vertex = 0;
    TokenList phrase;
    TokenList response;
    RewardBreakdown reward;

    nlohmann::json to_json() const;
};

/// Tape values of one turn, kept for policy-gradient updates.
struct TurnTrace {
    TurnDecision decision;
    Var state;
    bool goal_decided = false; // the session policy made the choice
    Var goal_log_prob;
    Var utter_log_prob;
    Var goal_value;
    Var utter_value;
    double goal_entropy = 0.0;
    double utter_entropy = 0.0;
};

struct TurnOptions {
    dvae::SampleMode mode = dvae::SampleMode::argmax;
    std::mt19937_64* rng = nullptr;
    std::optional<int> goal_override;
};

/// understand_context -> session policy -> utterance policy -> generator ->
/// reward, for the agent turn that answers the last element of state.context.
TurnTrace take_turn(nn::Tape& tape, const AgentParts& parts, const RlState& state, const TurnOptions& options = {});

/// Last two utterances of a dialog.
std::vector<TokenList> last_two(const std::vector<TokenList>& dialog);

struct EpisodeConfig {
    size_t max_turns = 8;
    dvae::SampleMode mode = dvae::SampleMode::argmax;
    std::uint64_t seed = 1;
};

struct EpisodeTurn {
    RlState state;
    TokenList user;
    TurnDecision decision;
};

struct Trajectory {
    std::vector<EpisodeTurn> turns;
    std::vector<TokenList> dialog; // user and agent utterances interleaved
    bool terminal = false;         // the simulator ended the dialog
    std::optional<std::string> error;

    nlohmann::json to_json() const;
};

/// Alternates simulator and agent turns until `max_turns` agent turns or the
/// simulator stops. Component failures truncate the trajectory and set error.
/// When `traces` is given, per-turn tape values on `tape` are appended.
Trajectory run_episode(const AgentParts& parts, Simulator& simulator, const EpisodeConfig& config,
                       nn::Tape* tape = nullptr, std::vector<TurnTrace>* traces = nullptr);

} // namespace atlas::gcs
