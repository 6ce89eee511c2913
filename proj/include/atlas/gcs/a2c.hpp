#pragma once

#include "atlas/gcs/agent.hpp"
#include "atlas/nn/adam.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace atlas::gcs {

struct A2cConfig {
    size_t episodes = 1000;
    double gamma = 0.95;
    double value_coef = 0.5;
    size_t max_turns = 8;
    nn::AdamConfig adam;
    std::uint64_t seed = 1;
    /// Policy checkpoint and curves.jsonl go here when set.
    std::optional<std::filesystem::path> out_dir;
    /// Extra keys recorded with the saved policy (checkpoint, graph digest).
    nlohmann::json provenance = nlohmann::json::object();

    nlohmann::json to_json() const;
};

struct EpisodeStats {
    size_t episode = 0;
    size_t turns = 0;
    double mean_reward = 0.0;      // mean r^u over turns
    double mean_goal_reward = 0.0; // mean r^g over session decisions
    double goal_entropy = 0.0;     // mean over session decisions
    double utter_entropy = 0.0;
    double loss = 0.0;
    bool error = false;

    nlohmann::json to_json() const;
};

using EpisodeCallback = std::function<void(const EpisodeStats&)>;

/// Advantage actor-critic on both sub-policies with one-step TD targets
/// r + gamma V(s') and a learned value head per sub-policy. The utterance policy
/// is credited with r^u, the session policy with the segment mean r^g.
/// Only `policy` is updated. Throws std::runtime_error on non-finite values.
std::vector<EpisodeStats> a2c_train(Policy& policy, AgentParts parts, Simulator& simulator, const A2cConfig& config,
                                    const EpisodeCallback& on_episode = nullptr);

} // namespace atlas::gcs
