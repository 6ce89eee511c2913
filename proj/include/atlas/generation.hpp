#pragma once

#include "atlas/corpus.hpp"
#include "atlas/nn/adam.hpp"
#include "atlas/nn/layers.hpp"
#include "atlas/phrase_miner.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace atlas::generation {

using corpus::TokenIds;
using corpus::TokenList;

struct GeneratorConfig {
    int embed_dim = 32;
    int hidden_dim = 64;
    size_t max_len = 30;
    double dropout = 0.0;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static GeneratorConfig from_json(const nlohmann::json& j);
};

struct GeneratorInput {
    TokenList last_user_utterance;
    TokenList phrase;
};

struct Decode {
    enum class Kind { greedy, beam };
    Kind kind = Kind::greedy;
    size_t beam_size = 1;

    static Decode greedy() { return {}; }
    static Decode beam(size_t k) { return {Kind::beam, k}; }
};

struct TrainingPair {
    GeneratorInput input;
    TokenList reply;
    /// No phrase could be extracted from the reply; `input.phrase` is empty.
    bool placeholder = false;
};

/// (previous utterance, best bound phrase of the reply) -> reply for every
/// adjacent pair. The lowest-id bound phrase wins; otherwise the first
/// extracted phrase; otherwise an empty placeholder.
std::vector<TrainingPair> build_pairs(const corpus::SessionStore& store, const std::vector<phrases::Phrase>& bound,
                                      const phrases::ParserAdapter* adapter = nullptr);

/// Bidirectional GRU encoder over [utterance; <sep>; phrase] and a GRU decoder
/// with bilinear (Luong "general") attention.
class Generator {
public:
    Generator(GeneratorConfig config, corpus::Vocab vocab);

    const GeneratorConfig& config() const { return config_; }
    const corpus::Vocab& vocab() const { return vocab_; }
    nn::ParameterSet& params() { return params_; }
    const nn::ParameterSet& params() const { return params_; }

    TokenIds encode_input(const GeneratorInput& input) const;

    /// Teacher-forced NLL of `reply` followed by EOS. Dropout applies when
    /// `rng` is given.
    nn::Var nll(nn::Tape& tape, const TokenIds& input, const TokenIds& reply, std::mt19937_64* rng = nullptr) const;

    /// Deterministic decoding; output length <= config().max_len. Safe for
    /// concurrent callers.
    TokenList generate(const GeneratorInput& input, Decode decode = Decode::greedy()) const;
    TokenIds generate_ids(const TokenIds& input, Decode decode = Decode::greedy()) const;

    void save(const std::filesystem::path& dir) const;
    static Generator load(const std::filesystem::path& dir);
    std::string fingerprint() const;

private:
    struct Memory {
        nn::Var states; // 2H x T
        nn::Var keys;   // H x T
        nn::Var init;   // H
    };
    Memory encode(nn::Tape& tape, const TokenIds& input, std::mt19937_64* rng) const;
    /// One decoder step: new hidden state and output logits.
    std::pair<nn::Var, nn::Var> step(nn::Tape& tape, const Memory& m, int token, const nn::Var& h,
                                     std::mt19937_64* rng) const;
    nn::Var embed(nn::Tape& tape, int token, std::mt19937_64* rng) const;

    GeneratorConfig config_;
    corpus::Vocab vocab_;
    nn::ParameterSet params_;
    nn::LookupTable* words_ = nullptr;
    nn::BiGruEncoder encoder_;
    nn::Linear init_;
    nn::Linear attn_;
    nn::Linear combine_;
    nn::GruCell decoder_;
    nn::Linear output_;
};

struct PretrainConfig {
    int epochs = 10;
    size_t batch_size = 32;
    nn::AdamConfig adam;
    std::uint64_t seed = 1;
    std::optional<std::filesystem::path> checkpoint_dir;

    nlohmann::json to_json() const;
};

struct PretrainMetrics {
    int epoch = 0;
    double nll_per_token = 0.0;
    double grad_norm = 0.0;
    double seconds = 0.0;
    nlohmann::json to_json() const;
};

using PretrainCallback = std::function<void(const PretrainMetrics&)>;

/// Minimizes teacher-forced NLL; throws std::runtime_error on
/// non-finite loss or gradients.
std::vector<PretrainMetrics> pretrain(Generator& gen, const std::vector<TrainingPair>& pairs,
                                      const PretrainConfig& config, const PretrainCallback& on_epoch = nullptr);

/// Mean per-token NLL (EOS included) without dropout.
double evaluate_nll(const Generator& gen, const std::vector<TrainingPair>& pairs);

} // namespace atlas::generation
