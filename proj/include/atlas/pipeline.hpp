#pragma once

#include "atlas/corpus.hpp"
#include "atlas/dvae/model.hpp"
#include "atlas/dvae/trainer.hpp"
#include "atlas/gcs/a2c.hpp"
#include "atlas/gcs/agent.hpp"
#include "atlas/gcs/policy.hpp"
#include "atlas/gcs/reward.hpp"
#include "atlas/generation.hpp"
#include "atlas/graph.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace atlas::pipeline {

/// Bad flags, unreadable config, or an artifact produced under a different
/// config. Maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A stage threw. Maps to exit code 3.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error("stage " + stage + " failed: " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

enum class Stage { ingest, phrases, train_dvae, build_graph, pretrain_gen, train_policy };

const std::vector<Stage>& all_stages();
std::string stage_name(Stage s);

/// Artifact directories under one root.
struct Layout {
    std::filesystem::path root;

    std::filesystem::path store() const { return root / "store"; }
    std::filesystem::path vocab() const { return store() / "vocab.json"; }
    std::filesystem::path phrases_dir() const { return root / "phrases"; }
    std::filesystem::path phrases() const { return phrases_dir() / "phrases.jsonl"; }
    std::filesystem::path phrase_graph() const { return phrases_dir() / "phrase_graph.jsonl"; }
    std::filesystem::path ckpt() const { return root / "ckpt"; }
    std::filesystem::path graph_dir() const { return root / "graph"; }
    std::filesystem::path graph() const { return graph_dir() / "graph.atlas"; }
    std::filesystem::path gen() const { return root / "gen"; }
    std::filesystem::path policy() const { return root / "policy"; }
    std::filesystem::path dir(Stage s) const;
};

struct PipelineConfig {
    std::filesystem::path input;
    std::string format = "jsonl";
    std::filesystem::path out = "atlas-out";

    size_t vocab_size = 50000;
    size_t top_n = 1000;
    size_t min_edge_count = 3;
    /// "fallback" or a precomputed parse file for the adapter.
    std::string parser = "fallback";

    dvae::ModelConfig model;
    int dvae_epochs = 10;
    size_t dvae_batch = 32;
    double lr = 2e-3;
    double tau_start = 1.0;
    double tau_end = 0.1;
    bool rebuild_edges_per_epoch = false;

    graph::Thresholds thresholds;

    generation::GeneratorConfig gen;
    int gen_epochs = 10;
    double gen_lr = 2e-3;

    gcs::DualEncoderConfig scorer;
    gcs::PolicyConfig policy;
    size_t episodes = 1000;
    double gamma = 0.95;
    double policy_lr = 2e-3;
    gcs::RewardWeights weights;
    std::string simulator = "retrieval";

    std::uint64_t seed = 1;

    /// Sets every stage seed.
    void apply_seed(std::uint64_t s);

    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig from_file(const std::filesystem::path& path);

    /// The part of the config that affects `s` and every stage before it.
    nlohmann::json stage_json(Stage s) const;
    std::string stage_hash(Stage s) const;

    dvae::TrainConfig dvae_train() const;
    generation::PretrainConfig gen_train() const;
    gcs::A2cConfig a2c() const;
};

/// Every artifact directory carries atlas_config.json with the producing
/// config and its hash; `complete` is written last.
void write_stage_config(const std::filesystem::path& dir, const std::string& stage, const nlohmann::json& config);
std::optional<nlohmann::json> read_stage_config(const std::filesystem::path& dir);

enum class ResumeState { fresh, done, mismatch };
ResumeState resume_state(const std::filesystem::path& dir, const std::string& hash);

struct StageOutcome {
    Stage stage = Stage::ingest;
    bool skipped = false;
    double seconds = 0.0;
    nlohmann::json summary;
};

using Logger = std::function<void(const std::string&)>;

/// Stage bodies with explicit paths; each returns a JSON summary. The store
/// directory holds the vocabulary written by ingest.
namespace stages {

nlohmann::json ingest(const std::filesystem::path& input, const std::string& format, size_t vocab_size,
                      const std::filesystem::path& store_dir);
nlohmann::json phrases(const std::filesystem::path& store_dir, const std::string& parser, size_t top_n,
                       size_t min_edge_count, const std::filesystem::path& out_dir);
nlohmann::json train_dvae(const std::filesystem::path& store_dir, const std::filesystem::path& phrases,
                          const std::filesystem::path& phrase_graph, const dvae::ModelConfig& model,
                          dvae::TrainConfig train, const std::filesystem::path& ckpt, const Logger& log = nullptr);
nlohmann::json build_graph(const std::filesystem::path& ckpt, const std::filesystem::path& store_dir,
                           const graph::Thresholds& thresholds, const std::filesystem::path& out_file);
nlohmann::json pretrain_gen(const std::filesystem::path& store_dir, const std::filesystem::path& phrases,
                            const std::string& parser, const generation::GeneratorConfig& gen,
                            generation::PretrainConfig train, const std::filesystem::path& out_dir,
                            const Logger& log = nullptr);

struct PolicyInputs {
    std::filesystem::path ckpt;
    std::filesystem::path graph;
    std::filesystem::path store;
    /// Optional; without it rollouts echo the chosen phrase.
    std::filesystem::path gen;
    gcs::DualEncoderConfig scorer;
    gcs::PolicyConfig policy;
    gcs::A2cConfig a2c;
    gcs::RewardWeights weights;
    std::string simulator = "retrieval";
};
nlohmann::json train_policy(const PolicyInputs& in, const std::filesystem::path& out_dir, const Logger& log = nullptr);

struct EvalInputs {
    std::filesystem::path ckpt;
    std::filesystem::path store;
    /// When graph and policy are set, `dialogs` simulated dialogs against a
    /// retrieval simulator over `store` give hq_length and agent Dist-n.
    std::filesystem::path graph;
    std::filesystem::path policy;
    std::filesystem::path gen;
    size_t dialogs = 50;
    std::uint64_t seed = 1;
};
nlohmann::json eval(const EvalInputs& in);

} // namespace stages

/// Single stage with its inputs read from and outputs written to the layout.
nlohmann::json run_stage(Stage s, const PipelineConfig& config, const Logger& log = nullptr);

/// ingest -> phrases -> train-dvae -> build-graph -> pretrain-gen ->
/// train-policy. Completed stages with a matching hash are skipped; a
/// mismatching completed stage is refused unless `force`, which reruns it
/// and everything after it.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, bool force = false, const Logger& log = nullptr);

/// Trained artifacts wired into agent parts. Not movable: parts point into it.
struct AgentBundle {
    AgentBundle() = default;
    AgentBundle(const AgentBundle&) = delete;
    AgentBundle& operator=(const AgentBundle&) = delete;

    std::unique_ptr<dvae::DvaeModel> model;
    dvae::FrozenVertices frozen;
    graph::StructureGraph graph;
    std::unique_ptr<gcs::Policy> policy;
    std::unique_ptr<generation::Generator> generator;
    std::unique_ptr<gcs::RelevanceScorer> scorer;
    gcs::RewardWeights weights;
    std::mutex model_mutex;

    gcs::AgentParts parts();
};

struct BundlePaths {
    std::filesystem::path ckpt;
    std::filesystem::path graph;
    std::filesystem::path policy;
    /// Empty: responses echo the chosen phrase.
    std::filesystem::path gen;

    static BundlePaths from_layout(const Layout& l);
};

/// Throws ConfigError when a file is missing or the graph and policy were
/// produced from a different checkpoint than `ckpt`.
std::unique_ptr<AgentBundle> load_bundle(const BundlePaths& paths);

/// Relative paths resolve against ATLAS_DATA_DIR when it is set.
std::filesystem::path data_path(const std::filesystem::path& p);

/// ATLAS_SEED when set and valid, else `fallback`. Throws ConfigError on a
/// malformed value.
std::uint64_t env_seed(std::uint64_t fallback);

} // namespace atlas::pipeline
