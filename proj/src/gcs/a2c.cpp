#include "atlas/gcs/a2c.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace atlas::gcs {

using nlohmann::json;

json A2cConfig::to_json() const {
    return json{{"episodes", episodes}, {"gamma", gamma},   {"value_coef", value_coef}, {"max_turns", max_turns},
                {"lr", adam.lr},        {"clip_norm", adam.clip_norm}, {"seed", seed}};
}

json EpisodeStats::to_json() const {
    return json{{"episode", episode},
                {"turns", turns},
                {"mean_reward", mean_reward},
                {"mean_goal_reward", mean_goal_reward},
                {"goal_entropy", goal_entropy},
                {"utter_entropy", utter_entropy},
                {"loss", loss},
                {"error", error}};
}

namespace {

// One-step TD terms for one sub-policy: actor -A log pi(a|s) and critic
// (target - V(s))^2 with target = r + gamma V(s') held fixed.
void td_terms(std::vector<Var>& terms, const Var& log_prob, const Var& value, double reward, double next_value,
              const A2cConfig& config) {
    const double target = reward + config.gamma * next_value;
    const double advantage = target - value.scalar();
    terms.push_back(nn::scale(log_prob, -advantage));
    Var diff = nn::add_scalar(value, -target);
    terms.push_back(nn::scale(nn::cmul(diff, diff), config.value_coef));
}

} // namespace

std::vector<EpisodeStats> a2c_train(Policy& policy, AgentParts parts, Simulator& simulator, const A2cConfig& config,
                                    const EpisodeCallback& on_episode) {
    if (!(config.gamma >= 0.0 && config.gamma <= 1.0)) {
        throw std::invalid_argument("gamma must lie in [0, 1]");
    }
    parts.policy = &policy;
    nn::Adam opt(policy.params(), config.adam);
    std::ofstream curves;
    if (config.out_dir) {
        std::filesystem::create_directories(*config.out_dir);
        curves.open(*config.out_dir / "curves.jsonl");
    }
    std::vector<EpisodeStats> history;
    for (size_t ep = 0; ep < config.episodes; ++ep) {
        nn::Tape tape;
        std::vector<TurnTrace> traces;
        EpisodeConfig ec;
        ec.max_turns = config.max_turns;
        ec.mode = dvae::SampleMode::sample;
        ec.seed = config.seed * 1000003ULL + ep;
        Trajectory t = run_episode(parts, simulator, ec, &tape, &traces);

        EpisodeStats st;
        st.episode = ep + 1;
        st.turns = traces.size();
        st.error = t.error.has_value();
        if (!traces.empty()) {
            std::vector<int> goals;
            std::vector<double> totals;
            for (const auto& tr : traces) {
                goals.push_back(tr.decision.goal);
                totals.push_back(tr.decision.reward.weighted_total);
            }
            const std::vector<double> goal_rewards = assign_goal_reward(goals, totals);
            std::vector<Var> terms;
            size_t decisions = 0;
            for (size_t l = 0; l < traces.size(); ++l) {
                const bool last = l + 1 == traces.size();
                const TurnTrace& tr = traces[l];
                const double next_u = last ? 0.0 : traces[l + 1].utter_value.scalar();
                td_terms(terms, tr.utter_log_prob, tr.utter_value, totals[l], next_u, config);
                st.mean_reward += totals[l];
                st.utter_entropy += tr.utter_entropy;
                if (tr.goal_decided) {
                    const double next_g = last ? 0.0 : traces[l + 1].goal_value.scalar();
                    td_terms(terms, tr.goal_log_prob, tr.goal_value, goal_rewards[l], next_g, config);
                    st.mean_goal_reward += goal_rewards[l];
                    st.goal_entropy += tr.goal_entropy;
                    ++decisions;
                }
            }
            const double n = static_cast<double>(traces.size());
            st.mean_reward /= n;
            st.utter_entropy /= n;
            if (decisions > 0) {
                st.mean_goal_reward /= static_cast<double>(decisions);
                st.goal_entropy /= static_cast<double>(decisions);
            }
            Var loss = nn::scale(nn::sum(terms), 1.0 / n);
            st.loss = loss.scalar();
            if (!std::isfinite(st.loss)) {
                throw std::runtime_error("non-finite policy loss at episode " + std::to_string(ep + 1));
            }
            tape.backward(loss);
            if (!policy.params().grads_finite()) {
                throw std::runtime_error("non-finite policy gradient at episode " + std::to_string(ep + 1));
            }
            opt.step();
        }
        if (config.out_dir) {
            curves << st.to_json().dump() << '\n';
        }
        history.push_back(st);
        if (on_episode) {
            on_episode(st);
        }
    }
    if (config.out_dir) {
        curves.flush();
        json prov = config.provenance;
        prov["a2c"] = config.to_json();
        policy.save(*config.out_dir, prov);
    }
    return history;
}

} // namespace atlas::gcs
