#include "atlas/pipeline.hpp"

#include "atlas/gcs/simulator.hpp"
#include "atlas/metrics.hpp"
#include "atlas/phrase_miner.hpp"
#include "atlas/util/hash.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>

namespace atlas::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;
using corpus::TokenList;

namespace {

constexpr const char* kStageFile = "atlas_config.json";

json weights_json(const gcs::RewardWeights& w) { return json::array({w.relevance, w.closeness, w.repetition}); }

gcs::RewardWeights weights_from(const json& j) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError("reward weights must be a 3-element array");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::string file_digest(const fs::path& p) {
    if (p.empty() || !fs::is_regular_file(p)) {
        return {};
    }
    return util::sha256_file(p);
}

std::vector<Stage> deps(Stage s) {
    switch (s) {
    case Stage::ingest:
        return {Stage::ingest};
    case Stage::phrases:
        return {Stage::ingest, Stage::phrases};
    case Stage::train_dvae:
        return {Stage::ingest, Stage::phrases, Stage::train_dvae};
    case Stage::build_graph:
        return {Stage::ingest, Stage::phrases, Stage::train_dvae, Stage::build_graph};
    case Stage::pretrain_gen:
        return {Stage::ingest, Stage::phrases, Stage::pretrain_gen};
    case Stage::train_policy:
        return all_stages();
    }
    return {};
}

std::unique_ptr<phrases::ParserAdapter> make_parser(const std::string& spec) {
    if (spec == "fallback") {
        return nullptr;
    }
    return std::make_unique<phrases::PrecomputedParser>(data_path(spec));
}

void say(const Logger& log, const std::string& msg) {
    if (log) {
        log(msg);
    }
}

} // namespace

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> stages{Stage::ingest,      Stage::phrases,      Stage::train_dvae,
                                           Stage::build_graph, Stage::pretrain_gen, Stage::train_policy};
    return stages;
}

std::string stage_name(Stage s) {
    switch (s) {
    case Stage::ingest:
        return "ingest";
    case Stage::phrases:
        return "phrases";
    case Stage::train_dvae:
        return "train-dvae";
    case Stage::build_graph:
        return "build-graph";
    case Stage::pretrain_gen:
        return "pretrain-gen";
    case Stage::train_policy:
        return "train-policy";
    }
    return "?";
}

fs::path Layout::dir(Stage s) const {
    switch (s) {
    case Stage::ingest:
        return store();
    case Stage::phrases:
        return phrases_dir();
    case Stage::train_dvae:
        return ckpt();
    case Stage::build_graph:
        return graph_dir();
    case Stage::pretrain_gen:
        return gen();
    case Stage::train_policy:
        return policy();
    }
    return root;
}

void PipelineConfig::apply_seed(std::uint64_t s) {
    seed = s;
    model.seed = s;
    gen.seed = s;
    scorer.seed = s;
    policy.seed = s;
}

json PipelineConfig::to_json() const {
    return json{{"input", input.string()},
                {"format", format},
                {"out", out.string()},
                {"vocab_size", vocab_size},
                {"top_n", top_n},
                {"min_edge_count", min_edge_count},
                {"parser", parser},
                {"model", model.to_json()},
                {"dvae_epochs", dvae_epochs},
                {"dvae_batch", dvae_batch},
                {"lr", lr},
                {"tau_start", tau_start},
                {"tau_end", tau_end},
                {"rebuild_edges_per_epoch", rebuild_edges_per_epoch},
                {"alpha_uu", thresholds.alpha_uu},
                {"alpha_su", thresholds.alpha_su},
                {"alpha_ss", thresholds.alpha_ss},
                {"gen", gen.to_json()},
                {"gen_epochs", gen_epochs},
                {"gen_lr", gen_lr},
                {"scorer", scorer.to_json()},
                {"policy", policy.to_json()},
                {"episodes", episodes},
                {"gamma", gamma},
                {"policy_lr", policy_lr},
                {"reward_weights", weights_json(weights)},
                {"simulator", simulator},
                {"seed", seed}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    try {
        c.input = j.value("input", std::string{});
        c.format = j.value("format", c.format);
        c.out = j.value("out", c.out.string());
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.top_n = j.value("top_n", c.top_n);
        c.min_edge_count = j.value("min_edge_count", c.min_edge_count);
        c.parser = j.value("parser", c.parser);
        if (j.contains("model")) {
            c.model = dvae::ModelConfig::from_json(j.at("model"));
        }
        c.dvae_epochs = j.value("dvae_epochs", c.dvae_epochs);
        c.dvae_batch = j.value("dvae_batch", c.dvae_batch);
        c.lr = j.value("lr", c.lr);
        c.tau_start = j.value("tau_start", c.tau_start);
        c.tau_end = j.value("tau_end", c.tau_end);
        c.rebuild_edges_per_epoch = j.value("rebuild_edges_per_epoch", c.rebuild_edges_per_epoch);
        c.thresholds.alpha_uu = j.value("alpha_uu", c.thresholds.alpha_uu);
        c.thresholds.alpha_su = j.value("alpha_su", c.thresholds.alpha_su);
        c.thresholds.alpha_ss = j.value("alpha_ss", c.thresholds.alpha_ss);
        if (j.contains("gen")) {
            c.gen = generation::GeneratorConfig::from_json(j.at("gen"));
        }
        c.gen_epochs = j.value("gen_epochs", c.gen_epochs);
        c.gen_lr = j.value("gen_lr", c.gen_lr);
        if (j.contains("scorer")) {
            c.scorer = gcs::DualEncoderConfig::from_json(j.at("scorer"));
        }
        if (j.contains("policy")) {
            c.policy = gcs::PolicyConfig::from_json(j.at("policy"));
        }
        c.episodes = j.value("episodes", c.episodes);
        c.gamma = j.value("gamma", c.gamma);
        c.policy_lr = j.value("policy_lr", c.policy_lr);
        if (j.contains("reward_weights")) {
            c.weights = weights_from(j.at("reward_weights"));
        }
        c.simulator = j.value("simulator", c.simulator);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad pipeline config: ") + e.what());
    }
    return c;
}

PipelineConfig PipelineConfig::from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config " + path.string());
    }
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
}

json PipelineConfig::stage_json(Stage s) const {
    json out = json::object();
    for (Stage d : deps(s)) {
        json part;
        switch (d) {
        case Stage::ingest:
            part = {{"input_digest", file_digest(data_path(input))}, {"format", format}, {"vocab_size", vocab_size}};
            break;
        case Stage::phrases:
            part = {{"top_n", top_n},
                    {"min_edge_count", min_edge_count},
                    {"parser", parser == "fallback" ? parser : file_digest(data_path(parser))}};
            break;
        case Stage::train_dvae:
            part = {{"model", model.to_json()}, {"train", dvae_train().to_json()}};
            break;
        case Stage::build_graph:
            part = {{"alpha_uu", thresholds.alpha_uu},
                    {"alpha_su", thresholds.alpha_su},
                    {"alpha_ss", thresholds.alpha_ss}};
            break;
        case Stage::pretrain_gen:
            part = {{"gen", gen.to_json()}, {"train", gen_train().to_json()}};
            break;
        case Stage::train_policy: {
            std::string sim = simulator;
            if (sim.rfind("scripted:", 0) == 0) {
                sim = "scripted:" + file_digest(data_path(sim.substr(9)));
            }
            part = {{"scorer", scorer.to_json()},
                    {"policy", policy.to_json()},
                    {"a2c", a2c().to_json()},
                    {"reward_weights", weights_json(weights)},
                    {"simulator", sim}};
            break;
        }
        }
        out[stage_name(d)] = part;
    }
    return out;
}

std::string PipelineConfig::stage_hash(Stage s) const { return util::sha256_hex(stage_json(s).dump()); }

dvae::TrainConfig PipelineConfig::dvae_train() const {
    dvae::TrainConfig t;
    t.epochs = dvae_epochs;
    t.batch_size = dvae_batch;
    t.adam.lr = lr;
    t.tau_start = tau_start;
    t.tau_end = tau_end;
    t.rebuild_edges_per_epoch = rebuild_edges_per_epoch;
    t.min_edge_count = min_edge_count;
    t.seed = seed;
    return t;
}

generation::PretrainConfig PipelineConfig::gen_train() const {
    generation::PretrainConfig t;
    t.epochs = gen_epochs;
    t.adam.lr = gen_lr;
    t.seed = seed;
    return t;
}

gcs::A2cConfig PipelineConfig::a2c() const {
    gcs::A2cConfig a;
    a.episodes = episodes;
    a.gamma = gamma;
    a.adam.lr = policy_lr;
    a.seed = seed;
    return a;
}

void write_stage_config(const fs::path& dir, const std::string& stage, const json& config) {
    fs::create_directories(dir);
    json record{{"stage", stage},
                {"hash", util::sha256_hex(config.dump())},
                {"config", config},
                {"complete", true}};
    std::ofstream out(dir / kStageFile, std::ios::trunc);
    out << record.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error("cannot write " + (dir / kStageFile).string());
    }
}

std::optional<json> read_stage_config(const fs::path& dir) {
    std::ifstream in(dir / kStageFile);
    if (!in) {
        return std::nullopt;
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error&) {
        return std::nullopt;
    }
}

ResumeState resume_state(const fs::path& dir, const std::string& hash) {
    auto rec = read_stage_config(dir);
    if (!rec || !rec->value("complete", false)) {
        return ResumeState::fresh;
    }
    return rec->value("hash", std::string{}) == hash ? ResumeState::done : ResumeState::mismatch;
}

namespace stages {

json ingest(const fs::path& input, const std::string& format, size_t vocab_size, const fs::path& store_dir) {
    if (input.empty()) {
        throw ConfigError("ingest needs an input corpus");
    }
    auto store = corpus::ingest_corpus(input, corpus::parse_format(format));
    store.save(store_dir);
    auto vocab = corpus::Vocab::build(store, vocab_size);
    vocab.save(store_dir / "vocab.json");
    return {{"sessions", store.size()},
            {"utterances", store.utterance_count()},
            {"dropped", store.dropped()},
            {"vocab", vocab.size()}};
}

json phrases(const fs::path& store_dir, const std::string& parser, size_t top_n, size_t min_edge_count,
             const fs::path& out_dir) {
    auto store = corpus::SessionStore::load(store_dir);
    auto adapter = make_parser(parser);
    phrases::ExtractionStats stats;
    auto extraction = phrases::extract_corpus(store, adapter.get(), phrases::FallbackParser{}, &stats);
    auto bound = phrases::rank_and_bind(extraction, top_n);
    auto pg = phrases::build_phrase_graph(extraction, bound.phrases, min_edge_count);
    fs::create_directories(out_dir);
    phrases::save_phrases(bound.phrases, out_dir / "phrases.jsonl");
    phrases::save_phrase_graph(pg, out_dir / "phrase_graph.jsonl");
    return {{"phrases", bound.phrases.size()},
            {"truncated", bound.truncated},
            {"phrase_edges", pg.edges.size()},
            {"fallback_trees", stats.fallback_trees}};
}

json train_dvae(const fs::path& store_dir, const fs::path& phrases_file, const fs::path& phrase_graph,
                const dvae::ModelConfig& model_config, dvae::TrainConfig train, const fs::path& ckpt,
                const Logger& log) {
    auto vocab = corpus::Vocab::load(store_dir / "vocab.json");
    auto store = corpus::SessionStore::load(store_dir);
    auto ph = phrases::load_phrases(phrases_file);
    auto pg = phrases::load_phrase_graph(phrase_graph, ph.size());
    dvae::DvaeModel model(model_config, vocab, ph, pg);
    train.checkpoint_dir = ckpt;
    auto history = dvae::train(model, store, train, [&](const dvae::EpochMetrics& m) {
        say(log, "  epoch " + std::to_string(m.epoch) + " loss " + std::to_string(m.loss) + " nll/token " +
                     std::to_string(m.nll_per_token));
    });
    model.save(ckpt);
    return {{"epochs", history.size()},
            {"first_nll_per_token", history.front().nll_per_token},
            {"final_nll_per_token", history.back().nll_per_token},
            {"final_loss", history.back().loss},
            {"fingerprint", model.fingerprint()}};
}

json build_graph(const fs::path& ckpt, const fs::path& store_dir, const graph::Thresholds& thresholds,
                 const fs::path& out_file) {
    auto model = dvae::DvaeModel::load(ckpt);
    auto store = corpus::SessionStore::load(store_dir);
    auto vocab = corpus::Vocab::load(store_dir / "vocab.json");
    auto assignments = graph::map_corpus(model, store, &vocab);
    const fs::path dir = out_file.has_parent_path() ? out_file.parent_path() : fs::path(".");
    fs::create_directories(dir);
    graph::save_assignments(assignments, fs::path(out_file.string() + ".assignments.jsonl"));
    auto g = graph::build_graph(graph::accumulate(assignments), thresholds, model.phrases(), model.fingerprint());
    graph::save_graph(g, out_file);
    return g.stats();
}

json pretrain_gen(const fs::path& store_dir, const fs::path& phrases_file, const std::string& parser,
                  const generation::GeneratorConfig& gen_config, generation::PretrainConfig train,
                  const fs::path& out_dir, const Logger& log) {
    auto vocab = corpus::Vocab::load(store_dir / "vocab.json");
    auto store = corpus::SessionStore::load(store_dir);
    auto ph = phrases::load_phrases(phrases_file);
    auto adapter = make_parser(parser);
    auto pairs = generation::build_pairs(store, ph, adapter.get());
    generation::Generator gen(gen_config, vocab);
    train.checkpoint_dir = out_dir;
    auto history = generation::pretrain(gen, pairs, train, [&](const generation::PretrainMetrics& m) {
        say(log, "  epoch " + std::to_string(m.epoch) + " nll/token " + std::to_string(m.nll_per_token));
    });
    return {{"pairs", pairs.size()},
            {"final_nll_per_token", history.empty() ? 0.0 : history.back().nll_per_token},
            {"fingerprint", gen.fingerprint()}};
}

json train_policy(const PolicyInputs& in, const fs::path& out_dir, const Logger& log) {
    auto model = dvae::DvaeModel::load(in.ckpt);
    auto frozen = model.freeze_vertices();
    auto g = graph::load_graph(in.graph);
    if (!g.checkpoint().empty() && g.checkpoint() != model.fingerprint()) {
        throw ConfigError("graph " + in.graph.string() + " was built from a different checkpoint");
    }
    auto store = corpus::SessionStore::load(in.store);
    std::optional<generation::Generator> gen;
    if (!in.gen.empty()) {
        gen = generation::Generator::load(in.gen);
    }
    gcs::DualEncoderScorer scorer(in.scorer, model.vocab());
    auto losses = scorer.train(store);
    scorer.save(out_dir / "scorer");
    gcs::Policy policy(in.policy, model);
    auto sim = gcs::make_simulator(in.simulator, &store);
    gcs::AgentParts parts;
    parts.model = &model;
    parts.frozen = &frozen;
    parts.graph = &g;
    parts.policy = &policy;
    parts.generator = gen ? &*gen : nullptr;
    parts.scorer = &scorer;
    parts.weights = in.weights;
    auto a2c = in.a2c;
    a2c.out_dir = out_dir;
    a2c.provenance = {{"checkpoint", model.fingerprint()},
                      {"graph", g.digest()},
                      {"reward_weights", weights_json(in.weights)}};
    double recent = 0.0;
    size_t n = 0;
    auto history = gcs::a2c_train(policy, parts, *sim, a2c, [&](const gcs::EpisodeStats& st) {
        recent += st.mean_reward;
        if (++n == 100) {
            say(log, "  episode " + std::to_string(st.episode + 1) + " mean reward " + std::to_string(recent / 100.0));
            recent = 0.0;
            n = 0;
        }
    });
    return {{"episodes", history.size()},
            {"scorer_final_loss", losses.empty() ? 0.0 : losses.back()},
            {"fingerprint", policy.fingerprint()}};
}

json eval(const EvalInputs& in) {
    auto store = corpus::SessionStore::load(in.store);
    metrics::EvalReport report;
    std::unique_ptr<AgentBundle> bundle;
    if (!in.graph.empty() && !in.policy.empty()) {
        bundle = load_bundle({in.ckpt, in.graph, in.policy, in.gen});
    }
    if (bundle) {
        report.reconstruction = metrics::reconstruction_eval(*bundle->model, store);
        auto dull = metrics::seed_dull_list(store);
        gcs::RetrievalSimulator sim(store);
        auto parts = bundle->parts();
        double hq = 0.0;
        std::vector<TokenList> agent;
        for (size_t i = 0; i < in.dialogs; ++i) {
            gcs::EpisodeConfig ec;
            ec.seed = in.seed * 1000003ULL + i;
            gcs::Trajectory t = gcs::run_episode(parts, sim, ec);
            hq += static_cast<double>(metrics::hq_dialog_length(t.dialog, dull));
            for (const auto& turn : t.turns) {
                agent.push_back(turn.decision.response);
            }
        }
        report.dialogs = in.dialogs;
        if (in.dialogs > 0) {
            report.hq_length = hq / static_cast<double>(in.dialogs);
            report.agent_dist1 = metrics::distinct_n(agent, 1);
            report.agent_dist2 = metrics::distinct_n(agent, 2);
        }
    } else {
        auto model = dvae::DvaeModel::load(in.ckpt);
        report.reconstruction = metrics::reconstruction_eval(model, store);
    }
    return metrics::to_json(report);
}

} // namespace stages

json run_stage(Stage s, const PipelineConfig& c, const Logger& log) {
    const Layout l{data_path(c.out)};
    switch (s) {
    case Stage::ingest:
        return stages::ingest(data_path(c.input), c.format, c.vocab_size, l.store());
    case Stage::phrases:
        return stages::phrases(l.store(), c.parser, c.top_n, c.min_edge_count, l.phrases_dir());
    case Stage::train_dvae:
        return stages::train_dvae(l.store(), l.phrases(), l.phrase_graph(), c.model, c.dvae_train(), l.ckpt(), log);
    case Stage::build_graph:
        return stages::build_graph(l.ckpt(), l.store(), c.thresholds, l.graph());
    case Stage::pretrain_gen:
        return stages::pretrain_gen(l.store(), l.phrases(), c.parser, c.gen, c.gen_train(), l.gen(), log);
    case Stage::train_policy: {
        stages::PolicyInputs in;
        in.ckpt = l.ckpt();
        in.graph = l.graph();
        in.store = l.store();
        in.gen = l.gen();
        in.scorer = c.scorer;
        in.policy = c.policy;
        in.a2c = c.a2c();
        in.weights = c.weights;
        in.simulator = c.simulator;
        return stages::train_policy(in, l.policy(), log);
    }
    }
    return {};
}

std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, bool force, const Logger& log) {
    const Layout l{data_path(config.out)};
    std::vector<ResumeState> states;
    std::vector<std::string> refused;
    for (Stage s : all_stages()) {
        states.push_back(resume_state(l.dir(s), config.stage_hash(s)));
        if (states.back() == ResumeState::mismatch) {
            refused.push_back(l.dir(s).string());
        }
    }
    if (!refused.empty() && !force) {
        std::string msg = "config hash mismatch with existing artifacts in";
        for (const auto& r : refused) {
            msg += " " + r;
        }
        throw ConfigError(msg + "; use a fresh --out or --force");
    }
    fs::create_directories(l.root);
    std::ofstream(l.root / "pipeline.json", std::ios::trunc) << config.to_json().dump(2) << '\n';

    std::vector<StageOutcome> out;
    std::set<Stage> ran;
    for (size_t i = 0; i < all_stages().size(); ++i) {
        const Stage s = all_stages()[i];
        bool upstream_ran = false;
        for (Stage d : deps(s)) {
            upstream_ran = upstream_ran || ran.contains(d);
        }
        StageOutcome o;
        o.stage = s;
        if (states[i] == ResumeState::done && !upstream_ran) {
            o.skipped = true;
            say(log, stage_name(s) + ": up to date, skipped");
            out.push_back(o);
            continue;
        }
        say(log, stage_name(s) + ": running");
        const auto t0 = std::chrono::steady_clock::now();
        fs::remove_all(l.dir(s));
        try {
            o.summary = run_stage(s, config, log);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(stage_name(s), e.what());
        }
        write_stage_config(l.dir(s), stage_name(s), config.stage_json(s));
        o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        say(log, stage_name(s) + ": done in " + std::to_string(o.seconds) + " s " + o.summary.dump());
        ran.insert(s);
        out.push_back(o);
    }
    return out;
}

gcs::AgentParts AgentBundle::parts() {
    gcs::AgentParts p;
    p.model = model.get();
    p.frozen = &frozen;
    p.graph = &graph;
    p.policy = policy.get();
    p.generator = generator.get();
    p.scorer = scorer.get();
    p.weights = weights;
    p.model_mutex = &model_mutex;
    return p;
}

BundlePaths BundlePaths::from_layout(const Layout& l) {
    BundlePaths b{l.ckpt(), l.graph(), l.policy(), {}};
    if (fs::exists(l.gen() / "generator.json")) {
        b.gen = l.gen();
    }
    return b;
}

std::unique_ptr<AgentBundle> load_bundle(const BundlePaths& paths) {
    auto b = std::make_unique<AgentBundle>();
    auto need = [](const fs::path& p, const std::string& what) {
        if (p.empty() || !fs::exists(p)) {
            throw ConfigError("missing " + what + (p.empty() ? std::string{} : " at " + p.string()));
        }
    };
    need(paths.ckpt, "structure checkpoint");
    need(paths.graph, "structure graph");
    need(paths.policy / "policy.json", "policy");
    need(paths.policy / "scorer", "relevance scorer");
    try {
        b->model = std::make_unique<dvae::DvaeModel>(dvae::DvaeModel::load(paths.ckpt));
        b->frozen = b->model->freeze_vertices();
        b->graph = graph::load_graph(paths.graph);
        const std::string fp = b->model->fingerprint();
        if (!b->graph.checkpoint().empty() && b->graph.checkpoint() != fp) {
            throw ConfigError("graph " + paths.graph.string() + " was built from a different checkpoint");
        }
        json manifest = gcs::Policy::read_manifest(paths.policy);
        const json& prov = manifest.at("provenance");
        if (prov.is_object() && prov.contains("checkpoint") && prov.at("checkpoint").get<std::string>() != fp) {
            throw ConfigError("policy " + paths.policy.string() + " was trained against a different checkpoint");
        }
        if (prov.is_object() && prov.contains("reward_weights")) {
            b->weights = weights_from(prov.at("reward_weights"));
        }
        b->policy = std::make_unique<gcs::Policy>(gcs::Policy::load(paths.policy, *b->model));
        if (!paths.gen.empty()) {
            b->generator = std::make_unique<generation::Generator>(generation::Generator::load(paths.gen));
            if (b->generator->vocab().digest() != b->model->vocab().digest()) {
                throw ConfigError("generator vocabulary does not match the checkpoint");
            }
        }
        b->scorer = std::make_unique<gcs::DualEncoderScorer>(gcs::DualEncoderScorer::load(paths.policy / "scorer"));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("cannot load artifacts: ") + e.what());
    }
    return b;
}

fs::path data_path(const fs::path& p) {
    if (p.empty() || p.is_absolute()) {
        return p;
    }
    const char* root = std::getenv("ATLAS_DATA_DIR");
    if (root == nullptr || *root == '\0') {
        return p;
    }
    return fs::path(root) / p;
}

std::uint64_t env_seed(std::uint64_t fallback) {
    const char* v = std::getenv("ATLAS_SEED");
    if (v == nullptr || *v == '\0') {
        return fallback;
    }
    try {
        size_t used = 0;
        const std::string s(v);
        const unsigned long long seed = std::stoull(s, &used);
        if (used != s.size()) {
            throw std::invalid_argument(s);
        }
        return seed;
    } catch (const std::exception&) {
        throw ConfigError(std::string("ATLAS_SEED is not an unsigned integer: ") + v);
    }
}

} // namespace atlas::pipeline
