#include "atlas/gcs/agent.hpp"

#include <algorithm>
#include <sstream>

namespace atlas::gcs {

using nlohmann::json;

namespace {

std::optional<int> best_graph_vertex(const dvae::DvaeModel& model, const graph::StructureGraph& graph,
                                     const TokenList& query) {
    for (const auto& sv : model.index().ranked(query)) {
        if (graph.has_utter(sv.id)) {
            return sv.id;
        }
    }
    return std::nullopt;
}

std::string join_ids(const std::vector<int>& ids) {
    std::ostringstream out;
    for (size_t i = 0; i < ids.size(); ++i) {
        out << (i ? "," : "") << ids[i];
    }
    return out.str();
}

std::vector<double> to_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

} // namespace

ContextHit understand_context(const std::vector<TokenList>& context, dvae::DvaeModel& model,
                              const dvae::FrozenVertices& frozen, const graph::StructureGraph& graph) {
    if (context.empty() || std::all_of(context.begin(), context.end(), [](const auto& u) { return u.empty(); })) {
        throw UnmappableContext("unmappable context: empty input");
    }
    if (graph.utter_vertices().empty()) {
        throw UnmappableContext("unmappable context: the graph has no utterance-level vertices");
    }
    const TokenList& last = context.back();
    const std::optional<int> best_last = best_graph_vertex(model, graph, last);
    if (best_last) {
        std::vector<int> candidates;
        for (int n : model.shortlist(last)) {
            if (graph.has_utter(n)) {
                candidates.push_back(n);
            }
        }
        if (candidates.empty()) {
            return {*best_last, 1};
        }
        nn::Tape tape;
        dvae::Forward f{tape};
        f.frozen = &frozen;
        dvae::CategoricalSample s = model.recognize_utterance(f, model.encode(last), candidates);
        return {candidates[static_cast<size_t>(s.index)], 0};
    }
    TokenList all;
    for (const auto& u : context) {
        all.insert(all.end(), u.begin(), u.end());
    }
    if (auto best = best_graph_vertex(model, graph, all)) {
        return {*best, 2};
    }
    throw UnmappableContext("unmappable context: no graph vertex shares a word with the input");
}

std::vector<TokenList> last_two(const std::vector<TokenList>& dialog) {
    const size_t from = dialog.size() > 2 ? dialog.size() - 2 : 0;
    return {dialog.begin() + static_cast<std::ptrdiff_t>(from), dialog.end()};
}

json TurnDecision::to_json() const {
    return json{{"hit_vertex", hit.vertex},
                {"hit_fallback", hit.fallback},
                {"goal_candidates", goal_candidates},
                {"goal_probs", to_vector(goal_probs)},
                {"goal", goal},
                {"goal_source", goal_source},
                {"utter_candidates", utter_candidates},
                {"utter_probs", to_vector(utter_probs)},
                {"utter_source", utter_source},
                {"vertex", vertex},
                {"phrase", phrase},
                {"response", response},
                {"reward", reward.to_json()}};
}

TurnTrace take_turn(nn::Tape& tape, const AgentParts& parts, const RlState& state, const TurnOptions& options) {
    if (parts.model == nullptr || parts.frozen == nullptr || parts.graph == nullptr || parts.policy == nullptr ||
        parts.scorer == nullptr) {
        throw std::invalid_argument("agent parts incomplete");
    }
    const graph::StructureGraph& g = *parts.graph;
    const Policy& policy = *parts.policy;
    TurnTrace tr;
    TurnDecision& d = tr.decision;
    {
        std::unique_lock<std::mutex> lock;
        if (parts.model_mutex != nullptr) {
            lock = std::unique_lock<std::mutex>(*parts.model_mutex);
        }
        d.hit = understand_context(state.context, *parts.model, *parts.frozen, g);
    }
    tr.state = policy.encode_state(tape, state);
    tr.goal_value = policy.value(tape, tr.state, CandidateLevel::session);
    tr.utter_value = policy.value(tape, tr.state, CandidateLevel::utterance);

    const std::vector<int> parents = g.parents(d.hit.vertex);
    if (options.goal_override) {
        const int pin = *options.goal_override;
        if (std::find(parents.begin(), parents.end(), pin) == parents.end()) {
            throw InvalidGoalOverride("goal " + std::to_string(pin) + " is not a parent of vertex " +
                                      std::to_string(d.hit.vertex) + " (parents: [" + join_ids(parents) + "])");
        }
        d.goal_candidates = {pin};
        d.goal_probs = Vector::Ones(1);
        d.goal = pin;
        d.goal_source = "pinned";
    } else if (!parents.empty()) {
        PolicyChoice c = policy.choose(tape, tr.state, CandidateLevel::session, parents, options.mode, options.rng);
        d.goal_candidates = parents;
        d.goal_probs = c.probs;
        d.goal = c.id;
        d.goal_source = "policy";
        tr.goal_decided = true;
        tr.goal_log_prob = nn::pick(c.log_probs, static_cast<Eigen::Index>(c.index));
        tr.goal_entropy = c.entropy();
    } else {
        d.goal_source = "kept";
        if (!state.goal_history.empty()) {
            d.goal = state.goal_history.back();
        } else if (!g.sess_counts().empty()) {
            // no parents means zero closeness everywhere: take the most frequent goal
            size_t best = 0;
            for (const auto& [m, c] : g.sess_counts()) {
                if (c > best) {
                    best = c;
                    d.goal = m;
                }
            }
        } else {
            throw UnmappableContext("unmappable context: the graph has no session-level vertices");
        }
    }

    std::vector<int> candidates = g.has_sess(d.goal) ? g.children(d.goal) : std::vector<int>{};
    d.utter_source = "children";
    if (candidates.empty()) {
        candidates = g.successors(d.hit.vertex);
        d.utter_source = "successors";
    }
    if (candidates.empty()) {
        candidates = {d.hit.vertex};
        d.utter_source = "hit";
    }
    PolicyChoice u = policy.choose(tape, tr.state, CandidateLevel::utterance, candidates, options.mode, options.rng);
    d.utter_candidates = candidates;
    d.utter_probs = u.probs;
    d.vertex = u.id;
    tr.utter_log_prob = nn::pick(u.log_probs, static_cast<Eigen::Index>(u.index));
    tr.utter_entropy = u.entropy();

    d.phrase = g.phrase(d.vertex);
    const TokenList& user = state.context.back();
    d.response = parts.generator != nullptr ? parts.generator->generate({user, d.phrase}, parts.decode) : d.phrase;
    d.reward = compute_reward({state.context, d.response, d.phrase, d.goal, d.vertex}, g, *parts.scorer,
                              parts.weights, parts.repetition);
    return tr;
}

json Trajectory::to_json() const {
    json turns_json = json::array();
    for (const auto& t : turns) {
        json j = t.decision.to_json();
        j["turn"] = t.state.turn_index + 1;
        j["user"] = t.user;
        turns_json.push_back(std::move(j));
    }
    return json{{"turns", turns_json},
                {"dialog", dialog},
                {"terminal", terminal},
                {"error", error ? json(*error) : json(nullptr)}};
}

Trajectory run_episode(const AgentParts& parts, Simulator& simulator, const EpisodeConfig& config, nn::Tape* tape,
                       std::vector<TurnTrace>* traces) {
    if (traces != nullptr && tape == nullptr) {
        throw std::invalid_argument("recording traces needs a caller-owned tape");
    }
    Trajectory t;
    std::mt19937_64 rng(config.seed);
    RlState state;
    try {
        TokenList user = simulator.open(config.seed);
        t.dialog.push_back(user);
        for (size_t turn = 0; turn < config.max_turns; ++turn) {
            state.context = last_two(t.dialog);
            state.turn_index = turn;
            nn::Tape local;
            nn::Tape& tp = tape != nullptr ? *tape : local;
            TurnTrace tr = take_turn(tp, parts, state, {config.mode, &rng, std::nullopt});
            t.turns.push_back({state, user, tr.decision});
            t.dialog.push_back(tr.decision.response);
            state.goal_history.push_back(tr.decision.goal);
            state.utter_history.push_back(tr.decision.vertex);
            if (traces != nullptr) {
                traces->push_back(std::move(tr));
            }
            if (turn + 1 == config.max_turns) {
                break;
            }
            SimulatorReply reply = simulator.respond(t.dialog);
            if (reply.terminate) {
                t.terminal = true;
                break;
            }
            user = reply.text;
            t.dialog.push_back(user);
        }
    } catch (const std::exception& e) {
        t.error = e.what();
    }
    return t;
}

} // namespace atlas::gcs
