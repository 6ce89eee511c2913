#pragma once

#include "atlas/bm25.hpp"
#include "atlas/corpus.hpp"
#include "atlas/nn/autodiff.hpp"
#include "atlas/nn/layers.hpp"
#include "atlas/nn/params.hpp"
#include "atlas/phrase_miner.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <random>
#include <unordered_map>
#include <vector>

namespace atlas::dvae {

using nn::Matrix;
using nn::Tape;
using nn::Var;
using nn::Vector;

/// Utterance-level prior used by the KL term.
enum class UtterPrior { shortlist, all_vertices };

struct ModelConfig {
    int num_goals = 6000;  // M
    int embed_dim = 200;   // word embeddings
    int hidden_dim = 512;  // every recurrent encoder/decoder
    int vertex_dim = 200;  // Lambda_g columns, latent v_n, Lambda_x output
    int shortlist_k = 50;
    int gcn_layers = 3;
    bool gcn_weighted = false;
    double dropout = 0.3;
    UtterPrior utter_prior = UtterPrior::shortlist;
    bool freeze_phrase_encoder = false;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Undirected neighbor lists (deduplicated, self-loops dropped) derived from
/// directed Utter-Utter edges.
using Adjacency = std::vector<std::vector<int>>;
Adjacency undirected_adjacency(size_t vertex_count, const std::vector<std::pair<int, int>>& edges);
Adjacency undirected_adjacency(const phrases::PhraseGraph& graph);

/// h^j(v) = sigmoid(sum over neighbors of h^{j-1}); columns of `h0` are the
/// vertices. Optional per-layer square transforms are applied to the neighbor
/// sum before the activation.
Matrix gcn_propagate(const Matrix& h0, const Adjacency& adjacency, int layers,
                     const std::vector<Matrix>* transforms = nullptr);

enum class SampleMode {
    sample,  // straight-through gumbel-softmax
    argmax,  // deterministic, no gradient through the choice
    relaxed, // soft gumbel-softmax forward (smooth, used for gradient checks)
};

struct CategoricalSample {
    Var log_probs; // log q over the support
    Var selector;  // one-hot (sample/argmax) or soft weights (relaxed)
    int index = 0; // position within the support
};

/// Draws from softmax(logits) according to `mode`. Gumbel noise comes from
/// `rng` (ignored for argmax). Ties in argmax resolve to the lowest index.
CategoricalSample sample_categorical(Tape& tape, const Var& logits, SampleMode mode, double tau,
                                     std::mt19937_64* rng);

/// KL(q || uniform over `support` outcomes), from log q.
Var kl_to_uniform(const Var& log_probs, double support);
double kl_to_uniform(const Vector& probs, double support);

/// Precomputed Lambda_x and GCN output for every utterance-level vertex.
struct FrozenVertices {
    Matrix utter;     // vertex_dim x N
    Matrix structure; // vertex_dim x N, h^L
};

/// Per-call state for one forward pass.
struct Forward {
    explicit Forward(Tape& t, SampleMode m = SampleMode::argmax, double temperature = 1.0,
                     std::mt19937_64* generator = nullptr, bool training = false)
        : tape(t), mode(m), tau(temperature), rng(generator), train(training) {}

    Tape& tape;
    SampleMode mode = SampleMode::argmax;
    double tau = 1.0;
    std::mt19937_64* rng = nullptr; // gumbel noise and dropout
    bool train = false;             // enables dropout
    const FrozenVertices* frozen = nullptr;

    std::unordered_map<int, Var> utter;             // Lambda_x[n]
    std::unordered_map<int, Var> structure;         // h^L[n]
    std::vector<std::unordered_map<int, Var>> gcn;  // h^j[n], j = 0..L
};

struct UtteranceRecognition {
    std::vector<int> shortlist;
    Vector posterior; // over shortlist
    int vertex = 0;   // sampled vertex id (member of shortlist)
};

struct RecognitionResult {
    std::vector<UtteranceRecognition> utterances;
    Vector goal_posterior; // over M
    int goal = 0;
};

struct ElboTerms {
    Var total;
    double recon_nll = 0.0;
    double kl_utter = 0.0;
    double kl_sess = 0.0;
    size_t tokens = 0; // reconstructed tokens including EOS
    RecognitionResult recognition;
};

/// Learnable parameters and inference routines of the structure model.
class DvaeModel {
public:
    DvaeModel(ModelConfig config, corpus::Vocab vocab, std::vector<phrases::Phrase> phrases,
              phrases::PhraseGraph phrase_graph);

    const ModelConfig& config() const { return config_; }
    const corpus::Vocab& vocab() const { return vocab_; }
    const std::vector<phrases::Phrase>& phrases() const { return phrases_; }
    const phrases::PhraseGraph& phrase_graph() const { return phrase_graph_; }
    const Adjacency& adjacency() const { return adjacency_; }
    const retrieval::ShortlistIndex& index() const { return index_; }
    nn::ParameterSet& params() { return params_; }
    const nn::ParameterSet& params() const { return params_; }
    int num_utter_vertices() const { return static_cast<int>(phrases_.size()); }
    int num_goals() const { return config_.num_goals; }

    /// Replaces the Utter-Utter edges used by the GCN.
    void set_phrase_graph(phrases::PhraseGraph graph);

    std::vector<int> shortlist(const corpus::TokenList& tokens) const;

    // --- building blocks -------------------------------------------------
    Var word(Forward& f, int token_id);
    /// e(ph_n): mean of phrase-encoder states.
    Var phrase_encoding(Forward& f, int n);
    /// Lambda_x[n] = W_u [e(ph_n); v_n]; `trainable_latent` gates v_n gradients.
    Var utter_vertex_embedding(Forward& f, int n, bool trainable_latent = true);
    /// Projected utterance representation, comparable with Lambda_x rows.
    Var encode_utterance(Forward& f, const corpus::TokenIds& tokens);
    /// Lambda_g as a vertex_dim x M tape value.
    Var goal_table(Forward& f);

    /// Makes Lambda_x and h^L available in `f` for every id in `active`
    /// (computing the GCN receptive field on the tape unless frozen).
    void prepare_vertices(Forward& f, const std::vector<int>& active);

    /// Posterior over the shortlist and a draw from it.
    CategoricalSample recognize_utterance(Forward& f, const corpus::TokenIds& tokens,
                                          const std::vector<int>& shortlist);
    /// e(z_1..c): projected vertex-sequence encoding of per-utterance h^L.
    Var session_encoding(Forward& f, const std::vector<Var>& structure_seq);
    /// Session posterior from per-utterance h^L mixtures.
    CategoricalSample recognize_session(Forward& f, const std::vector<Var>& structure_seq);

    Var decoder_init(Forward& f, const Var& utter_vec, const Var& goal_vec);
    /// Teacher-forced NLL of tokens followed by EOS.
    Var reconstruct_nll(Forward& f, const Var& init_hidden, const corpus::TokenIds& tokens);
    corpus::TokenIds greedy_decode(Forward& f, const Var& init_hidden, size_t max_len = 30);

    /// Single-sample ELBO estimate for one session; shortlists are recomputed
    /// when `shortlists` is null. Vertices must be prepared or frozen.
    ElboTerms elbo(Forward& f, const std::vector<corpus::TokenIds>& session,
                   const std::vector<std::vector<int>>* shortlists = nullptr);

    /// Argmax recognition of a whole session.
    RecognitionResult recognize(Forward& f, const std::vector<corpus::TokenIds>& session);

    /// Argmax z and g, then greedy decoding of every utterance.
    std::vector<corpus::TokenIds> reconstruct(Forward& f, const std::vector<corpus::TokenIds>& session,
                                              size_t max_len = 30);

    FrozenVertices freeze_vertices();

    /// Encodes token strings with the model vocabulary.
    corpus::TokenIds encode(const corpus::TokenList& tokens) const { return vocab_.encode(tokens); }

    void save(const std::filesystem::path& dir) const;
    static DvaeModel load(const std::filesystem::path& dir);
    /// Digest over configuration, vocabulary, phrases and parameter values.
    std::string fingerprint() const;

private:

    ModelConfig config_;
    corpus::Vocab vocab_;
    std::vector<phrases::Phrase> phrases_;
    std::vector<corpus::TokenIds> phrase_ids_;
    phrases::PhraseGraph phrase_graph_;
    Adjacency adjacency_;
    retrieval::ShortlistIndex index_;

    nn::ParameterSet params_;
    nn::LookupTable* words_ = nullptr;
    nn::LookupTable* latent_ = nullptr;
    nn::Parameter* goals_ = nullptr;
    nn::BiGruEncoder phrase_encoder_;
    nn::BiGruEncoder utterance_encoder_;
    nn::BiGruEncoder vertex_seq_encoder_;
    nn::Linear coupling_;      // W_u
    nn::Linear utter_proj_;    // e(x) -> vertex space
    nn::Linear session_proj_;  // e(z_1..c) -> vertex space
    nn::Linear init_proj_;     // [Lambda_x[z]; Lambda_g[g]] -> decoder hidden
    nn::GruCell decoder_;
    nn::Linear output_;
    std::vector<nn::Linear> gcn_transforms_;
};

} // namespace atlas::dvae
