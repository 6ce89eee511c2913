#include "atlas/chat_service.hpp"
#include "atlas/pipeline.hpp"
#include "atlas/synthetic.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace atlas;
using pipeline::ConfigError;
using pipeline::data_path;

namespace {

void log_line(const std::string& s) { std::cerr << s << '\n'; }

void add_model_flags(CLI::App* c, dvae::ModelConfig& m) {
    c->add_option("--num-goals", m.num_goals, "session-level vertices (M)");
    c->add_option("--embed-dim", m.embed_dim, "word embedding size");
    c->add_option("--hidden-dim", m.hidden_dim, "recurrent state size");
    c->add_option("--vertex-dim", m.vertex_dim, "vertex embedding size");
    c->add_option("--shortlist-k", m.shortlist_k, "BM25 shortlist size");
    c->add_option("--gcn-layers", m.gcn_layers, "message-passing layers");
    c->add_flag("--gcn-weighted", m.gcn_weighted, "weight GCN edges by count");
    c->add_option("--dropout", m.dropout, "dropout rate");
    c->add_flag("--freeze-phrase-encoder", m.freeze_phrase_encoder, "keep the phrase encoder fixed");
}

void add_dvae_train_flags(CLI::App* c, pipeline::PipelineConfig& p) {
    c->add_option("--epochs", p.dvae_epochs, "training epochs");
    c->add_option("--batch-size", p.dvae_batch, "sessions per batch");
    c->add_option("--lr", p.lr, "Adam learning rate");
    c->add_option("--tau-start", p.tau_start, "initial Gumbel temperature");
    c->add_option("--tau-end", p.tau_end, "final Gumbel temperature");
    c->add_flag("--rebuild-edges-per-epoch", p.rebuild_edges_per_epoch, "rebuild GCN edges from mappings");
}

void add_threshold_flags(CLI::App* c, graph::Thresholds& t) {
    c->add_option("--alpha-uu", t.alpha_uu, "Utter-Utter threshold");
    c->add_option("--alpha-su", t.alpha_su, "Sess-Utter threshold");
    c->add_option("--alpha-ss", t.alpha_ss, "Sess-Sess threshold");
}

void add_gen_flags(CLI::App* c, pipeline::PipelineConfig& p) {
    c->add_option("--gen-embed-dim", p.gen.embed_dim, "generator embedding size");
    c->add_option("--gen-hidden-dim", p.gen.hidden_dim, "generator state size");
    c->add_option("--gen-max-len", p.gen.max_len, "maximum response length");
    c->add_option("--gen-epochs", p.gen_epochs, "generator epochs");
    c->add_option("--gen-lr", p.gen_lr, "generator learning rate");
}

void add_policy_flags(CLI::App* c, pipeline::PipelineConfig& p, std::string& weights) {
    c->add_option("--simulator", p.simulator, "retrieval or scripted:FILE");
    c->add_option("--episodes", p.episodes, "training episodes");
    c->add_option("--gamma", p.gamma, "discount factor");
    c->add_option("--policy-lr", p.policy_lr, "policy learning rate");
    c->add_option("--reward-weights", weights, "relevance,closeness,repetition");
    c->add_option("--policy-embed-dim", p.policy.embed_dim, "policy word embedding size");
    c->add_option("--policy-hidden-dim", p.policy.hidden_dim, "policy state size");
    c->add_option("--scorer-dim", p.scorer.dim, "relevance scorer size");
    c->add_option("--scorer-epochs", p.scorer.epochs, "relevance scorer epochs");
}

std::string parser_spec(const std::string& parser, const std::string& parses) {
    if (parser == "fallback") {
        return parser;
    }
    if (parser != "adapter") {
        throw ConfigError("--parser must be adapter or fallback");
    }
    if (parses.empty()) {
        throw ConfigError("--parser adapter needs --parses FILE");
    }
    return parses;
}

void require(const fs::path& p, const std::string& what) {
    if (!fs::exists(data_path(p))) {
        throw ConfigError(what + " not found: " + data_path(p).string());
    }
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

std::atomic<httplib::Server*> g_server{nullptr};

void stop_server(int) {
    if (auto* s = g_server.load()) {
        s->stop();
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"atlas: dialog structure graphs and graph-grounded conversational agents"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "atlas 1.0");

    pipeline::PipelineConfig pc;
    std::string weights = "60,0.5,-0.5";
    std::optional<std::uint64_t> seed_flag;
    std::string parser = "fallback";
    std::string parses;

    auto* ingest = app.add_subcommand("ingest", "tokenize a raw corpus into a session store");
    fs::path out;
    ingest->add_option("--input", pc.input, "raw corpus file")->required();
    ingest->add_option("--format", pc.format, "jsonl or tsv");
    ingest->add_option("--vocab-size", pc.vocab_size, "maximum vocabulary size including specials");
    ingest->add_option("--out", out, "store directory")->required();

    auto* ph = app.add_subcommand("phrases", "mine verb phrases and the initial phrase graph");
    fs::path store;
    ph->add_option("--store", store, "session store")->required();
    ph->add_option("--top-n", pc.top_n, "phrases bound to vertices");
    ph->add_option("--min-edge-count", pc.min_edge_count, "minimum adjacent-pair count");
    ph->add_option("--parser", parser, "adapter or fallback");
    ph->add_option("--parses", parses, "precomputed parses for the adapter");
    ph->add_option("--out", out, "output directory")->required();

    auto* tdv = app.add_subcommand("train-dvae", "train the structure model");
    fs::path phrases_file;
    fs::path phrase_graph;
    tdv->add_option("--store", store, "session store")->required();
    tdv->add_option("--phrases", phrases_file, "phrases.jsonl")->required();
    tdv->add_option("--phrase-graph", phrase_graph, "phrase_graph.jsonl")->required();
    tdv->add_option("--seed", seed_flag, "random seed");
    tdv->add_option("--out", out, "checkpoint directory")->required();
    add_model_flags(tdv, pc.model);
    add_dvae_train_flags(tdv, pc);

    auto* bg = app.add_subcommand("build-graph", "map the corpus and build the structure graph");
    fs::path ckpt;
    bg->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    bg->add_option("--store", store, "session store")->required();
    bg->add_option("--out", out, "graph file")->required();
    add_threshold_flags(bg, pc.thresholds);

    auto* pg = app.add_subcommand("pretrain-gen", "pretrain the response generator");
    pg->add_option("--store", store, "session store")->required();
    pg->add_option("--phrases", phrases_file, "phrases.jsonl")->required();
    pg->add_option("--parser", parser, "adapter or fallback");
    pg->add_option("--parses", parses, "precomputed parses for the adapter");
    pg->add_option("--seed", seed_flag, "random seed");
    pg->add_option("--out", out, "generator directory")->required();
    add_gen_flags(pg, pc);

    auto* tp = app.add_subcommand("train-policy", "train both sub-policies with A2C");
    fs::path graph_file;
    fs::path gen_dir;
    tp->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    tp->add_option("--graph", graph_file, "graph file")->required();
    tp->add_option("--store", store, "session store for the scorer and simulator")->required();
    tp->add_option("--gen", gen_dir, "generator directory (optional)");
    tp->add_option("--seed", seed_flag, "random seed");
    tp->add_option("--out", out, "policy directory")->required();
    add_policy_flags(tp, pc, weights);

    auto* ev = app.add_subcommand("eval", "reconstruction and dialog metrics");
    fs::path report;
    fs::path policy_dir;
    pipeline::stages::EvalInputs ei;
    ev->add_option("--ckpt", ei.ckpt, "checkpoint directory")->required();
    ev->add_option("--store", ei.store, "evaluation store")->required();
    ev->add_option("--graph", ei.graph, "graph file, with --policy enables dialog metrics");
    ev->add_option("--policy", ei.policy, "policy directory");
    ev->add_option("--gen", ei.gen, "generator directory");
    ev->add_option("--dialogs", ei.dialogs, "simulated dialogs");
    ev->add_option("--seed", seed_flag, "random seed");
    ev->add_option("--report", report, "report.json")->required();

    auto* chat = app.add_subcommand("chat", "talk to the agent in the terminal");
    fs::path root;
    fs::path transcript;
    auto add_bundle_flags = [&](CLI::App* c) {
        c->add_option("--root", root, "pipeline output directory (fills the paths below)");
        c->add_option("--ckpt", ckpt, "checkpoint directory");
        c->add_option("--graph", graph_file, "graph file");
        c->add_option("--policy", policy_dir, "policy directory");
        c->add_option("--gen", gen_dir, "generator directory");
    };
    add_bundle_flags(chat);
    chat->add_option("--transcript", transcript, "replay user lines from a file");

    auto* serve = app.add_subcommand("serve", "HTTP chat and graph service");
    int port = 8080;
    std::string host = "127.0.0.1";
    chat::ServiceConfig sc;
    int idle = 1800;
    add_bundle_flags(serve);
    serve->add_option("--port", port, "listen port");
    serve->add_option("--host", host, "listen address");
    serve->add_option("--idle-timeout", idle, "session idle expiry in seconds");
    serve->add_option("--cors-origin", sc.cors_origin, "allowed console origin");

    auto* gs = app.add_subcommand("graph-stats", "vertex and edge counts, or one vertex neighborhood");
    std::string vertex;
    std::string type;
    size_t limit = 20;
    gs->add_option("graph", graph_file, "graph file")->required();
    gs->add_option("--vertex", vertex, "u<id> or s<id>");
    gs->add_option("--type", type, "uu, su or ss");
    gs->add_option("--limit", limit, "maximum neighbors");

    auto* pl = app.add_subcommand("pipeline", "run every stage, skipping completed ones");
    fs::path config_file;
    bool force = false;
    pl->add_option("--config", config_file, "pipeline JSON config (flags below override it)");
    pl->add_option("--input", pc.input, "raw corpus file");
    pl->add_option("--format", pc.format, "jsonl or tsv");
    pl->add_option("--out", pc.out, "output root");
    pl->add_option("--vocab-size", pc.vocab_size, "maximum vocabulary size");
    pl->add_option("--top-n", pc.top_n, "phrases bound to vertices");
    pl->add_option("--min-edge-count", pc.min_edge_count, "minimum adjacent-pair count");
    pl->add_option("--parser", parser, "adapter or fallback");
    pl->add_option("--parses", parses, "precomputed parses for the adapter");
    pl->add_option("--seed", seed_flag, "random seed for every stage");
    pl->add_flag("--force", force, "rerun stages whose config changed");
    add_model_flags(pl, pc.model);
    add_dvae_train_flags(pl, pc);
    add_threshold_flags(pl, pc.thresholds);
    add_gen_flags(pl, pc);
    add_policy_flags(pl, pc, weights);

    auto* syn = app.add_subcommand("synth", "write a planted bigram-chain corpus");
    synthetic::ChainConfig cc;
    syn->add_option("--sessions", cc.sessions, "sessions");
    syn->add_option("--states", cc.states, "chain states");
    syn->add_option("--seed", cc.seed, "random seed");
    syn->add_option("--out", out, "corpus jsonl")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    auto finish_bundle_paths = [&]() {
        pipeline::BundlePaths b;
        if (!root.empty()) {
            b = pipeline::BundlePaths::from_layout(pipeline::Layout{data_path(root)});
        }
        if (!ckpt.empty()) {
            b.ckpt = data_path(ckpt);
        }
        if (!graph_file.empty()) {
            b.graph = data_path(graph_file);
        }
        if (!policy_dir.empty()) {
            b.policy = data_path(policy_dir);
        }
        if (!gen_dir.empty()) {
            b.gen = data_path(gen_dir);
        }
        return b;
    };

    std::string stage = app.get_subcommands().front()->get_name();
    try {
        if (*pl && !config_file.empty()) {
            // Re-parse so explicit flags override the file.
            auto base = pipeline::PipelineConfig::from_file(data_path(config_file));
            pc = base;
            weights = [&] {
                const auto& w = base.weights;
                return std::to_string(w.relevance) + "," + std::to_string(w.closeness) + "," +
                       std::to_string(w.repetition);
            }();
            parser = base.parser == "fallback" ? "fallback" : "adapter";
            parses = base.parser == "fallback" ? "" : base.parser;
            app.clear();
            app.parse(argc, argv);
        }
        try {
            pc.weights = gcs::RewardWeights::parse(weights);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("--reward-weights: ") + e.what());
        }
        pc.apply_seed(pipeline::env_seed(seed_flag.value_or(pc.seed)));

        if (*ingest) {
            require(pc.input, "input corpus");
            const fs::path dir = data_path(out);
            print(pipeline::stages::ingest(data_path(pc.input), pc.format, pc.vocab_size, dir));
            pipeline::write_stage_config(dir, stage,
                                         {{"input", pc.input.string()}, {"format", pc.format}, {"vocab_size", pc.vocab_size}});
        } else if (*ph) {
            require(store, "session store");
            const fs::path dir = data_path(out);
            const std::string spec = parser_spec(parser, parses);
            print(pipeline::stages::phrases(data_path(store), spec, pc.top_n, pc.min_edge_count, dir));
            pipeline::write_stage_config(
                dir, stage, {{"store", store.string()}, {"top_n", pc.top_n}, {"min_edge_count", pc.min_edge_count}, {"parser", spec}});
        } else if (*tdv) {
            require(store, "session store");
            require(phrases_file, "phrases file");
            require(phrase_graph, "phrase graph");
            const fs::path dir = data_path(out);
            print(pipeline::stages::train_dvae(data_path(store), data_path(phrases_file), data_path(phrase_graph), pc.model,
                                               pc.dvae_train(), dir, log_line));
            pipeline::write_stage_config(dir, stage,
                                         {{"store", store.string()},
                                          {"phrases", phrases_file.string()},
                                          {"phrase_graph", phrase_graph.string()},
                                          {"model", pc.model.to_json()},
                                          {"train", pc.dvae_train().to_json()}});
        } else if (*bg) {
            require(ckpt, "checkpoint");
            require(store, "session store");
            const fs::path file = data_path(out);
            print(pipeline::stages::build_graph(data_path(ckpt), data_path(store), pc.thresholds, file));
            json cfg{{"ckpt", ckpt.string()},
                     {"store", store.string()},
                     {"alpha_uu", pc.thresholds.alpha_uu},
                     {"alpha_su", pc.thresholds.alpha_su},
                     {"alpha_ss", pc.thresholds.alpha_ss}};
            std::ofstream(file.string() + ".config.json") << json{{"stage", stage}, {"config", cfg}}.dump(2) << '\n';
        } else if (*pg) {
            require(store, "session store");
            require(phrases_file, "phrases file");
            const fs::path dir = data_path(out);
            const std::string spec = parser_spec(parser, parses);
            print(pipeline::stages::pretrain_gen(data_path(store), data_path(phrases_file), spec, pc.gen, pc.gen_train(), dir,
                                                 log_line));
            pipeline::write_stage_config(dir, stage,
                                         {{"store", store.string()},
                                          {"phrases", phrases_file.string()},
                                          {"gen", pc.gen.to_json()},
                                          {"train", pc.gen_train().to_json()}});
        } else if (*tp) {
            require(ckpt, "checkpoint");
            require(graph_file, "graph file");
            require(store, "session store");
            pipeline::stages::PolicyInputs in;
            in.ckpt = data_path(ckpt);
            in.graph = data_path(graph_file);
            in.store = data_path(store);
            in.gen = gen_dir.empty() ? fs::path{} : data_path(gen_dir);
            in.scorer = pc.scorer;
            in.policy = pc.policy;
            in.a2c = pc.a2c();
            in.weights = pc.weights;
            in.simulator = pc.simulator;
            const fs::path dir = data_path(out);
            print(pipeline::stages::train_policy(in, dir, log_line));
            pipeline::write_stage_config(dir, stage,
                                         {{"ckpt", ckpt.string()},
                                          {"graph", graph_file.string()},
                                          {"store", store.string()},
                                          {"gen", gen_dir.string()},
                                          {"scorer", pc.scorer.to_json()},
                                          {"policy", pc.policy.to_json()},
                                          {"a2c", pc.a2c().to_json()},
                                          {"reward_weights", weights},
                                          {"simulator", pc.simulator}});
        } else if (*ev) {
            require(ei.ckpt, "checkpoint");
            require(ei.store, "evaluation store");
            ei.ckpt = data_path(ei.ckpt);
            ei.store = data_path(ei.store);
            if (!ei.graph.empty()) {
                ei.graph = data_path(ei.graph);
            }
            if (!ei.policy.empty()) {
                ei.policy = data_path(ei.policy);
            }
            if (!ei.gen.empty()) {
                ei.gen = data_path(ei.gen);
            }
            ei.seed = pc.seed;
            json r = pipeline::stages::eval(ei);
            const fs::path file = data_path(report);
            if (file.has_parent_path()) {
                fs::create_directories(file.parent_path());
            }
            std::ofstream(file) << r.dump(2) << '\n';
            print(r);
        } else if (*chat) {
            auto bundle = pipeline::load_bundle(finish_bundle_paths());
            auto parts = bundle->parts();
            if (!transcript.empty()) {
                std::ifstream in(data_path(transcript));
                if (!in) {
                    throw ConfigError("cannot read transcript " + transcript.string());
                }
                chat::run_repl(parts, in, std::cout, 8, true);
            } else {
                chat::run_repl(parts, std::cin, std::cout, 8, false);
            }
        } else if (*serve) {
            std::unique_ptr<pipeline::AgentBundle> bundle;
            std::optional<gcs::AgentParts> parts;
            try {
                bundle = pipeline::load_bundle(finish_bundle_paths());
                parts = bundle->parts();
            } catch (const ConfigError& e) {
                log_line(std::string("warning: ") + e.what() + "; session requests will answer 503");
            }
            sc.idle_timeout = std::chrono::seconds(idle);
            chat::ChatService service(parts, sc);
            httplib::Server server;
            service.mount(server);
            if (!server.bind_to_port(host, port)) {
                throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
            }
            g_server = &server;
            std::signal(SIGINT, stop_server);
            std::signal(SIGTERM, stop_server);
            log_line("serving on http://" + host + ":" + std::to_string(port));
            server.listen_after_bind();
            g_server = nullptr;
        } else if (*gs) {
            require(graph_file, "graph file");
            auto g = graph::load_graph(data_path(graph_file));
            if (vertex.empty()) {
                print(g.stats());
            } else {
                try {
                    print(json{{"vertex", graph::vertex_json(g, vertex)},
                               {"neighbors", graph::neighbors_json(g, vertex, type, limit)}});
                } catch (const std::exception& e) {
                    throw ConfigError(e.what());
                }
            }
        } else if (*pl) {
            require(pc.input, "input corpus");
            pc.parser = parser_spec(parser, parses);
            auto outcomes = pipeline::run_pipeline(pc, force, log_line);
            json summary = json::array();
            for (const auto& o : outcomes) {
                summary.push_back(
                    {{"stage", pipeline::stage_name(o.stage)}, {"skipped", o.skipped}, {"seconds", o.seconds}, {"summary", o.summary}});
            }
            print(summary);
        } else if (*syn) {
            auto c = synthetic::generate_chain(cc);
            const fs::path file = data_path(out);
            if (file.has_parent_path()) {
                fs::create_directories(file.parent_path());
            }
            std::ofstream o(file);
            for (const auto& s : c.store.sessions()) {
                json utts = json::array();
                for (const auto& u : s.utterances) {
                    utts.push_back(corpus::detokenize(u.tokens));
                }
                o << json{{"id", s.session_id}, {"utterances", utts}}.dump() << '\n';
            }
            print(json{{"sessions", c.store.size()}, {"transitions", c.transitions.size()}});
        }
    } catch (const ConfigError& e) {
        std::cerr << "atlas " << stage << ": config error: " << e.what() << '\n';
        return 2;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const pipeline::StageError& e) {
        std::cerr << "atlas " << stage << ": " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "atlas " << stage << ": stage failed: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
