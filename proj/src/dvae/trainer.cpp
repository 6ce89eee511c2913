#include "atlas/dvae/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace atlas::dvae {

using nlohmann::json;

json TrainConfig::to_json() const {
    return json{{"epochs", epochs},
                {"batch_size", batch_size},
                {"lr", adam.lr},
                {"clip_norm", adam.clip_norm},
                {"tau_start", tau_start},
                {"tau_end", tau_end},
                {"rebuild_edges_per_epoch", rebuild_edges_per_epoch},
                {"min_edge_count", min_edge_count},
                {"seed", seed}};
}

json EpochMetrics::to_json() const {
    return json{{"epoch", epoch},         {"tau", tau},
                {"loss", loss},           {"recon_nll", recon_nll},
                {"nll_per_token", nll_per_token}, {"kl_utter", kl_utter},
                {"kl_sess", kl_sess},     {"grad_norm", grad_norm},
                {"sessions", sessions},   {"seconds", seconds}};
}

EncodedCorpus encode_corpus(const DvaeModel& model, const corpus::SessionStore& store) {
    EncodedCorpus out;
    out.sessions.reserve(store.size());
    out.shortlists.reserve(store.size());
    for (const auto& s : store.sessions()) {
        auto& ids = out.sessions.emplace_back();
        auto& lists = out.shortlists.emplace_back();
        for (const auto& u : s.utterances) {
            ids.push_back(model.encode(u.tokens));
            lists.push_back(model.shortlist(u.tokens));
        }
    }
    return out;
}

double tau_at(const TrainConfig& config, size_t step, size_t total_steps) {
    if (total_steps <= 1) {
        return config.tau_start;
    }
    const double frac = static_cast<double>(std::min(step, total_steps - 1)) / static_cast<double>(total_steps - 1);
    return config.tau_start + (config.tau_end - config.tau_start) * frac;
}

namespace {

std::string epoch_dir_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "epoch-%03d", epoch);
    return buf;
}

} // namespace

phrases::PhraseGraph mapped_phrase_graph(DvaeModel& model, const EncodedCorpus& corpus, size_t min_count) {
    FrozenVertices frozen = model.freeze_vertices();
    std::map<std::pair<int, int>, size_t> counts;
    for (size_t s = 0; s < corpus.sessions.size(); ++s) {
        nn::Tape tape;
        Forward f{tape};
        f.frozen = &frozen;
        std::vector<int> mapped;
        for (size_t i = 0; i < corpus.sessions[s].size(); ++i) {
            CategoricalSample c = model.recognize_utterance(f, corpus.sessions[s][i], corpus.shortlists[s][i]);
            mapped.push_back(corpus.shortlists[s][i][static_cast<size_t>(c.index)]);
        }
        for (size_t i = 0; i + 1 < mapped.size(); ++i) {
            ++counts[{mapped[i], mapped[i + 1]}];
        }
    }
    phrases::PhraseGraph g;
    g.vertex_count = static_cast<size_t>(model.num_utter_vertices());
    for (const auto& [k, c] : counts) {
        if (c >= min_count) {
            g.edges.push_back({k.first, k.second, c});
        }
    }
    return g;
}

std::vector<EpochMetrics> train(DvaeModel& model, const corpus::SessionStore& store, const TrainConfig& config,
                                const EpochCallback& on_epoch) {
    if (store.empty()) {
        throw std::invalid_argument("cannot train on an empty store");
    }
    if (config.epochs < 1 || config.batch_size < 1) {
        throw std::invalid_argument("epochs and batch_size must be positive");
    }
    const EncodedCorpus data = encode_corpus(model, store);
    nn::Adam opt(model.params(), config.adam);
    std::mt19937_64 rng(config.seed);
    const size_t n = data.sessions.size();
    const size_t batches = (n + config.batch_size - 1) / config.batch_size;
    const size_t total_steps = batches * static_cast<size_t>(config.epochs);
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::ofstream metrics_log;
    if (config.checkpoint_dir) {
        std::filesystem::create_directories(*config.checkpoint_dir);
        metrics_log.open(*config.checkpoint_dir / "metrics.jsonl");
        std::ofstream(*config.checkpoint_dir / "train_config.json") << config.to_json().dump(2) << '\n';
    }

    std::vector<EpochMetrics> history;
    size_t step = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        EpochMetrics m;
        m.epoch = epoch;
        size_t tokens = 0;
        for (size_t b = 0; b < batches; ++b, ++step) {
            const double tau = tau_at(config, step, total_steps);
            m.tau = tau;
            const size_t lo = b * config.batch_size;
            const size_t hi = std::min(n, lo + config.batch_size);
            nn::Tape tape;
            Forward f{tape, SampleMode::sample, tau, &rng, true};
            std::vector<int> active;
            for (size_t k = lo; k < hi; ++k) {
                for (const auto& l : data.shortlists[order[k]]) {
                    active.insert(active.end(), l.begin(), l.end());
                }
            }
            std::sort(active.begin(), active.end());
            active.erase(std::unique(active.begin(), active.end()), active.end());
            model.prepare_vertices(f, active);

            std::vector<nn::Var> totals;
            for (size_t k = lo; k < hi; ++k) {
                const size_t s = order[k];
                ElboTerms e = model.elbo(f, data.sessions[s], &data.shortlists[s]);
                totals.push_back(e.total);
                m.recon_nll += e.recon_nll;
                m.kl_utter += e.kl_utter;
                m.kl_sess += e.kl_sess;
                tokens += e.tokens;
            }
            nn::Var loss = nn::scale(nn::sum(totals), 1.0 / static_cast<double>(totals.size()));
            const double value = loss.scalar();
            if (!std::isfinite(value)) {
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(b + 1) + " (tau " + std::to_string(tau) + ")");
            }
            tape.backward(loss);
            if (!model.params().grads_finite()) {
                throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(b + 1));
            }
            m.loss += value * static_cast<double>(totals.size());
            m.grad_norm += opt.step();
        }
        m.sessions = n;
        m.nll_per_token = m.recon_nll / static_cast<double>(std::max<size_t>(tokens, 1));
        m.loss /= static_cast<double>(n);
        m.recon_nll /= static_cast<double>(n);
        m.kl_utter /= static_cast<double>(n);
        m.kl_sess /= static_cast<double>(n);
        m.grad_norm /= static_cast<double>(batches);

        if (config.rebuild_edges_per_epoch) {
            model.set_phrase_graph(mapped_phrase_graph(model, data, config.min_edge_count));
        }
        m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (config.checkpoint_dir) {
            model.save(*config.checkpoint_dir / epoch_dir_name(epoch));
            metrics_log << m.to_json().dump() << '\n';
            metrics_log.flush();
        }
        history.push_back(m);
        if (on_epoch) {
            on_epoch(m);
        }
    }
    return history;
}

EpochMetrics evaluate_elbo(DvaeModel& model, const corpus::SessionStore& store) {
    const EncodedCorpus data = encode_corpus(model, store);
    FrozenVertices frozen = model.freeze_vertices();
    EpochMetrics m;
    size_t tokens = 0;
    for (size_t s = 0; s < data.sessions.size(); ++s) {
        nn::Tape tape;
        Forward f{tape};
        f.frozen = &frozen;
        ElboTerms e = model.elbo(f, data.sessions[s], &data.shortlists[s]);
        m.loss += e.total.scalar();
        m.recon_nll += e.recon_nll;
        m.kl_utter += e.kl_utter;
        m.kl_sess += e.kl_sess;
        tokens += e.tokens;
    }
    const double n = static_cast<double>(std::max<size_t>(data.sessions.size(), 1));
    m.sessions = data.sessions.size();
    m.nll_per_token = m.recon_nll / static_cast<double>(std::max<size_t>(tokens, 1));
    m.loss /= n;
    m.recon_nll /= n;
    m.kl_utter /= n;
    m.kl_sess /= n;
    return m;
}

std::vector<GridPoint> grid_search_goals(const ModelConfig& base, const corpus::Vocab& vocab,
                                         const std::vector<phrases::Phrase>& phrases,
                                         const phrases::PhraseGraph& graph, const corpus::SessionStore& train_store,
                                         const corpus::SessionStore& heldout, const std::vector<int>& candidates,
                                         const TrainConfig& config) {
    std::vector<GridPoint> out;
    for (int m : candidates) {
        ModelConfig c = base;
        c.num_goals = m;
        DvaeModel model(c, vocab, phrases, graph);
        TrainConfig tc = config;
        tc.checkpoint_dir.reset();
        train(model, train_store, tc);
        out.push_back({m, evaluate_elbo(model, heldout).nll_per_token});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const GridPoint& a, const GridPoint& b) { return a.heldout_nll < b.heldout_nll; });
    return out;
}

} // namespace atlas::dvae
