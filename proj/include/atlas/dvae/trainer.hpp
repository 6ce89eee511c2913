#pragma once

#include "atlas/dvae/model.hpp"
#include "atlas/nn/adam.hpp"

#include <functional>
#include <optional>
#include <stdexcept>

namespace atlas::dvae {

struct TrainConfig {
    int epochs = 10;
    size_t batch_size = 32;
    nn::AdamConfig adam{};
    double tau_start = 1.0;
    double tau_end = 0.1;
    bool rebuild_edges_per_epoch = false;
    size_t min_edge_count = 3; // used when rebuilding edges
    std::uint64_t seed = 1;
    /// When set, each epoch is written to <dir>/epoch-NNN and metrics to
    /// <dir>/metrics.jsonl.
    std::optional<std::filesystem::path> checkpoint_dir;

    nlohmann::json to_json() const;
};

struct EpochMetrics {
    int epoch = 0; // 1-based
    double tau = 1.0;
    double loss = 0.0;        // mean negative ELBO per session
    double recon_nll = 0.0;   // mean reconstruction NLL per session
    double nll_per_token = 0.0;
    double kl_utter = 0.0;    // mean per session
    double kl_sess = 0.0;     // mean per session
    double grad_norm = 0.0;   // mean pre-clip norm
    size_t sessions = 0;
    double seconds = 0.0;

    nlohmann::json to_json() const;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Session token ids plus their fixed BM25 shortlists.
struct EncodedCorpus {
    std::vector<std::vector<corpus::TokenIds>> sessions;
    std::vector<std::vector<std::vector<int>>> shortlists;
};

EncodedCorpus encode_corpus(const DvaeModel& model, const corpus::SessionStore& store);

/// Linear temperature schedule from tau_start at step 0 to tau_end at the last.
double tau_at(const TrainConfig& config, size_t step, size_t total_steps);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Minimizes the mean negative ELBO with Adam. Throws DivergenceError on a
/// non-finite loss or gradient.
std::vector<EpochMetrics> train(DvaeModel& model, const corpus::SessionStore& store, const TrainConfig& config,
                                const EpochCallback& on_epoch = {});

/// Mean per-session negative ELBO terms under argmax latents (no sampling).
EpochMetrics evaluate_elbo(DvaeModel& model, const corpus::SessionStore& store);

/// Utter-Utter edges between argmax-mapped vertices of adjacent utterances
/// with at least `min_count` occurrences.
phrases::PhraseGraph mapped_phrase_graph(DvaeModel& model, const EncodedCorpus& corpus, size_t min_count);

struct GridPoint {
    int num_goals = 0;
    double heldout_nll = 0.0;
};

/// Trains one model per candidate M and scores each on `heldout` by
/// reconstruction NLL per token; returns all points, best first.
std::vector<GridPoint> grid_search_goals(const ModelConfig& base, const corpus::Vocab& vocab,
                                         const std::vector<phrases::Phrase>& phrases,
                                         const phrases::PhraseGraph& graph, const corpus::SessionStore& train_store,
                                         const corpus::SessionStore& heldout, const std::vector<int>& candidates,
                                         const TrainConfig& config);

} // namespace atlas::dvae
