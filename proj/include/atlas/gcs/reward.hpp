#pragma once

#include "atlas/corpus.hpp"
#include "atlas/nn/adam.hpp"
#include "atlas/nn/layers.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace atlas::graph {
class StructureGraph;
}

namespace atlas::gcs {

using corpus::TokenList;

struct RewardWeights {
    double relevance = 60.0;
    double closeness = 0.5;
    double repetition = -0.5;

    /// "60,0.5,-0.5"
    static RewardWeights parse(const std::string& text);
    nlohmann::json to_json() const;
};

struct RewardBreakdown {
    double relevance = 0.0;
    double closeness = 0.0;
    int repetition = 0;
    double weighted_total = 0.0;
    bool scorer_failed = false;

    nlohmann::json to_json() const;
};

/// Which text the repetition rule inspects.
enum class RepetitionTarget { phrase, response };

/// Coherence of a response with its context, in [0, 1].
class RelevanceScorer {
public:
    virtual ~RelevanceScorer() = default;
    virtual double score(const std::vector<TokenList>& context, const TokenList& response) const = 0;
};

/// Wraps a callable; handy for crafted rewards.
class FunctionScorer : public RelevanceScorer {
public:
    using Fn = std::function<double(const std::vector<TokenList>&, const TokenList&)>;
    explicit FunctionScorer(Fn fn) : fn_(std::move(fn)) {}
    double score(const std::vector<TokenList>& context, const TokenList& response) const override {
        return fn_(context, response);
    }

private:
    Fn fn_;
};

struct DualEncoderConfig {
    int dim = 32;
    int epochs = 5;
    size_t batch_size = 32;
    size_t negatives = 1;
    nn::AdamConfig adam;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static DualEncoderConfig from_json(const nlohmann::json& j);
};

/// sigmoid(<f(context), g(response)> + b) where f and g are tanh projections
/// of mean word embeddings. Trained on adjacent corpus pairs against randomly
/// drawn responses.
class DualEncoderScorer : public RelevanceScorer {
public:
    DualEncoderScorer(DualEncoderConfig config, corpus::Vocab vocab);

    double score(const std::vector<TokenList>& context, const TokenList& response) const override;

    /// Returns the mean logistic loss of each epoch.
    std::vector<double> train(const corpus::SessionStore& store);

    void save(const std::filesystem::path& dir) const;
    static DualEncoderScorer load(const std::filesystem::path& dir);
    const corpus::Vocab& vocab() const { return vocab_; }

private:
    nn::Var logit(nn::Tape& tape, const corpus::TokenIds& context, const corpus::TokenIds& response) const;
    nn::Var bag(nn::Tape& tape, const corpus::TokenIds& ids, const nn::Linear& proj) const;
    corpus::TokenIds join(const std::vector<TokenList>& context) const;

    DualEncoderConfig config_;
    corpus::Vocab vocab_;
    nn::ParameterSet params_;
    nn::LookupTable* words_ = nullptr;
    nn::Linear ctx_proj_;
    nn::Linear resp_proj_;
    nn::Parameter* bias_ = nullptr;
};

/// |multiset intersection| / |phrase|; 0 for an empty phrase.
double repetition_overlap(const TokenList& phrase, const TokenList& utterance);
/// 1 when the overlap with any single context utterance exceeds 0.6.
int repetition_flag(const TokenList& phrase, const std::vector<TokenList>& context, double threshold = 0.6);

double weighted_total(const RewardWeights& w, double relevance, double closeness, int repetition);

struct RewardInput {
    const std::vector<TokenList>& context;
    const TokenList& response;
    const TokenList& phrase; // phrase of the chosen vertex
    int goal = 0;
    int chosen = 0;
};

/// Relevance from `scorer` (a throwing or out-of-range scorer gives 0 and sets
/// scorer_failed), closeness from the Sess-Utter weight, repetition on the
/// phrase or the response.
RewardBreakdown compute_reward(const RewardInput& in, const graph::StructureGraph& graph,
                               const RelevanceScorer& scorer, const RewardWeights& weights,
                               RepetitionTarget target = RepetitionTarget::phrase);

/// Maximal runs of equal consecutive goals as [begin, end) turn ranges.
std::vector<std::pair<size_t, size_t>> goal_segments(const std::vector<int>& goals);

/// r^g per turn: the mean weighted total of the turn's segment.
std::vector<double> assign_goal_reward(const std::vector<int>& goals, const std::vector<double>& totals);

} // namespace atlas::gcs
