#include "atlas/metrics.hpp"

#include "atlas/dvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace atlas::metrics {

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, size_t> ngram_counts(const TokenList& t, int n) {
    std::map<Gram, size_t> out;
    const auto len = static_cast<int>(t.size());
    for (int i = 0; i + n <= len; ++i) {
        ++out[Gram(t.begin() + i, t.begin() + i + n)];
    }
    return out;
}

struct Clipped {
    double matched = 0.0;
    double total = 0.0;
};

Clipped clipped(const TokenList& ref, const TokenList& hyp, int n) {
    const auto r = ngram_counts(ref, n);
    Clipped c;
    for (const auto& [g, k] : ngram_counts(hyp, n)) {
        auto it = r.find(g);
        c.matched += static_cast<double>(std::min(k, it == r.end() ? 0 : it->second));
        c.total += static_cast<double>(k);
    }
    return c;
}

void check_order(int n) {
    if (n < 1 || n > 4) {
        throw std::invalid_argument("BLEU order must be in 1..4");
    }
}

double combine(const std::vector<Clipped>& orders, double ref_len, double hyp_len, const BleuConfig& config) {
    if (hyp_len == 0.0) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (size_t k = 0; k < orders.size(); ++k) {
        double p = orders[k].total > 0 ? orders[k].matched / orders[k].total : 0.0;
        if (p == 0.0) {
            if (k == 0 || !config.smoothing) {
                return 0.0;
            }
            p = config.epsilon;
        }
        log_sum += std::log(p);
    }
    const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
    return bp * std::exp(log_sum / static_cast<double>(orders.size()));
}

} // namespace

double ngram_precision(const TokenList& reference, const TokenList& hypothesis, int n) {
    check_order(n);
    const Clipped c = clipped(reference, hypothesis, n);
    return c.total > 0 ? c.matched / c.total : 0.0;
}

double bleu_n(const TokenList& reference, const TokenList& hypothesis, int n, const BleuConfig& config) {
    return corpus_bleu({reference}, {hypothesis}, n, config);
}

double corpus_bleu(const std::vector<TokenList>& references, const std::vector<TokenList>& hypotheses, int n,
                   const BleuConfig& config) {
    check_order(n);
    if (references.size() != hypotheses.size()) {
        throw std::invalid_argument("BLEU needs one reference per hypothesis");
    }
    std::vector<Clipped> orders(static_cast<size_t>(n));
    double ref_len = 0.0;
    double hyp_len = 0.0;
    for (size_t i = 0; i < references.size(); ++i) {
        ref_len += static_cast<double>(references[i].size());
        hyp_len += static_cast<double>(hypotheses[i].size());
        for (int k = 1; k <= n; ++k) {
            const Clipped c = clipped(references[i], hypotheses[i], k);
            orders[static_cast<size_t>(k - 1)].matched += c.matched;
            orders[static_cast<size_t>(k - 1)].total += c.total;
        }
    }
    return combine(orders, ref_len, hyp_len, config);
}

double distinct_n(const std::vector<TokenList>& utterances, int n) {
    if (n < 1) {
        throw std::invalid_argument("distinct-n order must be positive");
    }
    std::set<Gram> seen;
    size_t total = 0;
    for (const auto& u : utterances) {
        for (const auto& [g, k] : ngram_counts(u, n)) {
            seen.insert(g);
            total += k;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(seen.size()) / static_cast<double>(total);
}

double token_overlap(const TokenList& a, const TokenList& b) {
    const size_t longest = std::max(a.size(), b.size());
    if (longest == 0) {
        return 0.0;
    }
    std::map<std::string, size_t> ca;
    for (const auto& t : a) {
        ++ca[t];
    }
    size_t shared = 0;
    for (const auto& t : b) {
        auto it = ca.find(t);
        if (it != ca.end() && it->second > 0) {
            --it->second;
            ++shared;
        }
    }
    return static_cast<double>(shared) / static_cast<double>(longest);
}

size_t hq_dialog_length(const std::vector<TokenList>& dialog, const std::vector<TokenList>& dull_list,
                        double overlap_threshold) {
    for (size_t i = 0; i < dialog.size(); ++i) {
        if (std::find(dull_list.begin(), dull_list.end(), dialog[i]) != dull_list.end()) {
            return i + 1;
        }
        if (i > 0 && token_overlap(dialog[i - 1], dialog[i]) > overlap_threshold) {
            return i + 1;
        }
    }
    return dialog.size();
}

std::vector<TokenList> seed_dull_list(const corpus::SessionStore& store, size_t k, size_t min_count) {
    std::map<TokenList, size_t> counts;
    for (const auto& s : store.sessions()) {
        for (const auto& u : s.utterances) {
            ++counts[u.tokens];
        }
    }
    std::vector<std::pair<TokenList, size_t>> ranked;
    for (auto& [t, c] : counts) {
        if (c >= min_count) {
            ranked.emplace_back(t, c);
        }
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<TokenList> out;
    for (size_t i = 0; i < ranked.size() && i < k; ++i) {
        out.push_back(ranked[i].first);
    }
    return out;
}

ReconstructionReport reconstruction_eval(dvae::DvaeModel& model, const corpus::SessionStore& store,
                                         const BleuConfig& bleu) {
    dvae::FrozenVertices frozen = model.freeze_vertices();
    ReconstructionReport r;
    std::vector<TokenList> refs;
    std::vector<TokenList> hyps;
    size_t tokens = 0;
    double nll = 0.0;
    for (const auto& s : store.sessions()) {
        std::vector<corpus::TokenIds> ids;
        for (const auto& u : s.utterances) {
            ids.push_back(model.encode(u.tokens));
        }
        nn::Tape tape;
        dvae::Forward f{tape};
        f.frozen = &frozen;
        dvae::ElboTerms e = model.elbo(f, ids);
        nll += e.recon_nll;
        tokens += e.tokens;
        nn::Tape decode_tape;
        dvae::Forward g{decode_tape};
        g.frozen = &frozen;
        auto out = model.reconstruct(g, ids);
        for (size_t i = 0; i < ids.size(); ++i) {
            // references go through the vocabulary so unknown words compare as <unk>
            refs.push_back(model.vocab().decode(ids[i]));
            hyps.push_back(model.vocab().decode(out[i]));
        }
        ++r.sessions;
        r.utterances += ids.size();
    }
    if (r.utterances == 0) {
        return r;
    }
    r.nll = nll / static_cast<double>(r.utterances);
    r.nll_per_token = nll / static_cast<double>(tokens);
    r.bleu1 = corpus_bleu(refs, hyps, 1, bleu);
    r.bleu2 = corpus_bleu(refs, hyps, 2, bleu);
    r.dist1 = distinct_n(hyps, 1);
    r.dist2 = distinct_n(hyps, 2);
    return r;
}

nlohmann::json to_json(const ReconstructionReport& r) {
    return {{"nll", r.nll},     {"nll_per_token", r.nll_per_token}, {"bleu1", r.bleu1},
            {"bleu2", r.bleu2}, {"dist1", r.dist1},                 {"dist2", r.dist2},
            {"sessions", r.sessions}, {"utterances", r.utterances}};
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j = to_json(r.reconstruction);
    j["hq_length"] = r.hq_length ? nlohmann::json(*r.hq_length) : nlohmann::json(nullptr);
    j["agent_dist1"] = r.agent_dist1 ? nlohmann::json(*r.agent_dist1) : nlohmann::json(nullptr);
    j["agent_dist2"] = r.agent_dist2 ? nlohmann::json(*r.agent_dist2) : nlohmann::json(nullptr);
    j["dialogs"] = r.dialogs;
    return j;
}

} // namespace atlas::metrics
