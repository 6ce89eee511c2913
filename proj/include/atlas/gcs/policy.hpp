#pragma once

#include "atlas/corpus.hpp"
#include "atlas/dvae/model.hpp"
#include "atlas/nn/layers.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace atlas::gcs {

using corpus::TokenList;
using nn::Matrix;
using nn::Var;
using nn::Vector;

struct RlState {
    std::vector<TokenList> context; // last two utterances, most recent last
    std::vector<int> goal_history;
    std::vector<int> utter_history;
    size_t turn_index = 0;
};

enum class CandidateLevel { session, utterance };

struct PolicyConfig {
    int embed_dim = 32;
    int hidden_dim = 32;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static PolicyConfig from_json(const nlohmann::json& j);
};

struct PolicyChoice {
    std::vector<int> candidates;
    Var log_probs; // over candidates
    Vector probs;
    size_t index = 0; // into candidates
    int id = 0;
    double entropy() const;
};

/// Session- and utterance-level sub-policies over a shared state encoding.
/// Vertex embeddings (Lambda_x, Lambda_g) come from a trained structure model
/// and stay fixed.
class Policy {
public:
    Policy(PolicyConfig config, const corpus::Vocab& vocab, Matrix utter_embeddings, Matrix goal_embeddings);
    /// Takes the vertex embeddings from `model`.
    Policy(PolicyConfig config, dvae::DvaeModel& model);

    const PolicyConfig& config() const { return config_; }
    nn::ParameterSet& params() { return params_; }
    const nn::ParameterSet& params() const { return params_; }
    Eigen::Index state_dim() const { return 6 * config_.hidden_dim; }

    /// [context; goal history; utterance history] encodings; empty parts are zeros.
    Var encode_state(nn::Tape& tape, const RlState& state) const;
    /// Per-block encodings in the same order.
    std::vector<Var> encode_blocks(nn::Tape& tape, const RlState& state) const;

    /// softmax over <P e, Lambda[c]> for the candidates only. `sample` draws
    /// with gumbel noise from `rng`; `argmax` picks the mode (lowest index on ties).
    PolicyChoice choose(nn::Tape& tape, const Var& state, CandidateLevel level, const std::vector<int>& candidates,
                        dvae::SampleMode mode, std::mt19937_64* rng = nullptr) const;
    Var value(nn::Tape& tape, const Var& state, CandidateLevel level) const;

    void save(const std::filesystem::path& dir, const nlohmann::json& provenance = {}) const;
    /// Loads parameters saved by save(); embeddings come from `model`.
    static Policy load(const std::filesystem::path& dir, dvae::DvaeModel& model);
    static nlohmann::json read_manifest(const std::filesystem::path& dir);
    std::string fingerprint() const;

private:
    PolicyConfig config_;
    corpus::Vocab vocab_;
    Matrix utter_emb_;
    Matrix goal_emb_;
    nn::ParameterSet params_;
    nn::LookupTable* words_ = nullptr;
    nn::BiGruEncoder context_enc_;
    nn::BiGruEncoder goal_enc_;
    nn::BiGruEncoder utter_enc_;
    nn::Linear goal_head_;
    nn::Linear utter_head_;
    nn::Linear goal_value_;
    nn::Linear utter_value_;
};

} // namespace atlas::gcs
