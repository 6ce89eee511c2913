#include "atlas/gcs/reward.hpp"

#include "atlas/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace atlas::gcs {

using nlohmann::json;
using nn::Var;

RewardWeights RewardWeights::parse(const std::string& text) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        size_t used = 0;
        const double x = std::stod(part, &used);
        if (used != part.size()) {
            throw std::invalid_argument("bad reward weight '" + part + "'");
        }
        v.push_back(x);
    }
    if (v.size() != 3) {
        throw std::invalid_argument("reward weights need three comma-separated numbers");
    }
    return {v[0], v[1], v[2]};
}

json RewardWeights::to_json() const { return json::array({relevance, closeness, repetition}); }

json RewardBreakdown::to_json() const {
    return json{{"relevance", relevance},
                {"closeness", closeness},
                {"repetition", repetition},
                {"weighted_total", weighted_total},
                {"scorer_failed", scorer_failed}};
}

double repetition_overlap(const TokenList& phrase, const TokenList& utterance) {
    if (phrase.empty()) {
        return 0.0;
    }
    std::map<std::string, size_t> avail;
    for (const auto& t : utterance) {
        ++avail[t];
    }
    size_t shared = 0;
    for (const auto& t : phrase) {
        auto it = avail.find(t);
        if (it != avail.end() && it->second > 0) {
            --it->second;
            ++shared;
        }
    }
    return static_cast<double>(shared) / static_cast<double>(phrase.size());
}

int repetition_flag(const TokenList& phrase, const std::vector<TokenList>& context, double threshold) {
    for (const auto& u : context) {
        if (repetition_overlap(phrase, u) > threshold) {
            return 1;
        }
    }
    return 0;
}

double weighted_total(const RewardWeights& w, double relevance, double closeness, int repetition) {
    return w.relevance * relevance + w.closeness * closeness + w.repetition * static_cast<double>(repetition);
}

RewardBreakdown compute_reward(const RewardInput& in, const graph::StructureGraph& graph,
                               const RelevanceScorer& scorer, const RewardWeights& weights,
                               RepetitionTarget target) {
    RewardBreakdown r;
    try {
        r.relevance = scorer.score(in.context, in.response);
        if (!(r.relevance >= 0.0 && r.relevance <= 1.0)) {
            r.relevance = 0.0;
            r.scorer_failed = true;
        }
    } catch (const std::exception&) {
        r.relevance = 0.0;
        r.scorer_failed = true;
    }
    r.closeness = graph.goal_closeness(in.goal, in.chosen);
    r.repetition = repetition_flag(target == RepetitionTarget::phrase ? in.phrase : in.response, in.context);
    r.weighted_total = weighted_total(weights, r.relevance, r.closeness, r.repetition);
    return r;
}

std::vector<std::pair<size_t, size_t>> goal_segments(const std::vector<int>& goals) {
    std::vector<std::pair<size_t, size_t>> out;
    size_t begin = 0;
    for (size_t i = 1; i <= goals.size(); ++i) {
        if (i == goals.size() || goals[i] != goals[begin]) {
            out.emplace_back(begin, i);
            begin = i;
        }
    }
    return out;
}

std::vector<double> assign_goal_reward(const std::vector<int>& goals, const std::vector<double>& totals) {
    if (goals.size() != totals.size()) {
        throw std::invalid_argument("one reward per goal decision required");
    }
    std::vector<double> out(goals.size());
    for (const auto& [b, e] : goal_segments(goals)) {
        const double mean = std::accumulate(totals.begin() + static_cast<std::ptrdiff_t>(b),
                                            totals.begin() + static_cast<std::ptrdiff_t>(e), 0.0) /
                            static_cast<double>(e - b);
        std::fill(out.begin() + static_cast<std::ptrdiff_t>(b), out.begin() + static_cast<std::ptrdiff_t>(e), mean);
    }
    return out;
}

json DualEncoderConfig::to_json() const {
    return json{{"dim", dim},         {"epochs", epochs}, {"batch_size", batch_size}, {"negatives", negatives},
                {"lr", adam.lr},      {"seed", seed}};
}

DualEncoderConfig DualEncoderConfig::from_json(const json& j) {
    DualEncoderConfig c;
    c.dim = j.at("dim").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<size_t>();
    c.negatives = j.at("negatives").get<size_t>();
    c.adam.lr = j.at("lr").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

DualEncoderScorer::DualEncoderScorer(DualEncoderConfig config, corpus::Vocab vocab)
    : config_(config), vocab_(std::move(vocab)) {
    std::mt19937_64 rng(config_.seed);
    words_ = &params_.add_table("words", config_.dim, static_cast<Eigen::Index>(vocab_.size()), 0.1, rng);
    ctx_proj_ = nn::Linear(params_, "ctx", config_.dim, config_.dim, true, rng);
    resp_proj_ = nn::Linear(params_, "resp", config_.dim, config_.dim, true, rng);
    bias_ = &params_.add("bias", 1, 1, 0.0, rng);
}

corpus::TokenIds DualEncoderScorer::join(const std::vector<TokenList>& context) const {
    corpus::TokenIds ids;
    for (const auto& u : context) {
        auto e = vocab_.encode(u);
        ids.insert(ids.end(), e.begin(), e.end());
    }
    return ids;
}

Var DualEncoderScorer::bag(nn::Tape& tape, const corpus::TokenIds& ids, const nn::Linear& proj) const {
    Var mean;
    if (ids.empty()) {
        mean = tape.constant(nn::Matrix::Zero(config_.dim, 1));
    } else {
        std::vector<Var> xs;
        for (int id : ids) {
            xs.push_back(tape.lookup(*words_, id));
        }
        mean = nn::mean(xs);
    }
    return nn::tanh(proj(tape, mean));
}

Var DualEncoderScorer::logit(nn::Tape& tape, const corpus::TokenIds& context, const corpus::TokenIds& response) const {
    return nn::add(nn::dot(bag(tape, context, ctx_proj_), bag(tape, response, resp_proj_)), tape.parameter(*bias_));
}

double DualEncoderScorer::score(const std::vector<TokenList>& context, const TokenList& response) const {
    nn::Tape tape;
    const double l = logit(tape, join(context), vocab_.encode(response)).scalar();
    return 1.0 / (1.0 + std::exp(-l));
}

std::vector<double> DualEncoderScorer::train(const corpus::SessionStore& store) {
    struct Example {
        corpus::TokenIds context;
        corpus::TokenIds response;
    };
    std::vector<Example> pos;
    std::vector<corpus::TokenIds> pool;
    for (const auto& s : store.sessions()) {
        for (size_t i = 0; i < s.utterances.size(); ++i) {
            pool.push_back(vocab_.encode(s.utterances[i].tokens));
            if (i == 0) {
                continue;
            }
            std::vector<TokenList> ctx;
            if (i >= 2) {
                ctx.push_back(s.utterances[i - 2].tokens);
            }
            ctx.push_back(s.utterances[i - 1].tokens);
            pos.push_back({join(ctx), pool.back()});
        }
    }
    if (pos.empty()) {
        throw std::invalid_argument("no adjacent utterance pairs to train the relevance scorer");
    }
    nn::Adam opt(params_, config_.adam);
    std::mt19937_64 rng(config_.seed);
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    std::vector<size_t> order(pos.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> history;
    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        size_t terms_seen = 0;
        for (size_t lo = 0; lo < order.size(); lo += config_.batch_size) {
            const size_t hi = std::min(order.size(), lo + config_.batch_size);
            nn::Tape tape;
            std::vector<Var> terms;
            for (size_t k = lo; k < hi; ++k) {
                const Example& ex = pos[order[k]];
                terms.push_back(nn::negate(nn::log(nn::sigmoid(logit(tape, ex.context, ex.response)))));
                for (size_t n = 0; n < config_.negatives; ++n) {
                    Var l = logit(tape, ex.context, pool[pick(rng)]);
                    terms.push_back(nn::negate(nn::log(nn::sigmoid(nn::negate(l)))));
                }
            }
            Var loss = nn::scale(nn::sum(terms), 1.0 / static_cast<double>(terms.size()));
            if (!std::isfinite(loss.scalar())) {
                throw std::runtime_error("non-finite relevance scorer loss");
            }
            tape.backward(loss);
            opt.step();
            total += loss.scalar() * static_cast<double>(terms.size());
            terms_seen += terms.size();
        }
        history.push_back(total / static_cast<double>(terms_seen));
    }
    return history;
}

void DualEncoderScorer::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    params_.save(dir / "params.bin");
    vocab_.save(dir / "vocab.tsv");
    std::ofstream out(dir / "scorer.json");
    out << json{{"format", "atlas-scorer"}, {"version", 1}, {"config", config_.to_json()}}.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error("failed writing scorer to " + dir.string());
    }
}

DualEncoderScorer DualEncoderScorer::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "scorer.json");
    if (!in) {
        throw std::runtime_error("no relevance scorer at " + dir.string());
    }
    json j = json::parse(in);
    if (j.value("format", "") != "atlas-scorer" || j.value("version", 0) != 1) {
        throw std::runtime_error("unsupported scorer format in " + dir.string());
    }
    DualEncoderScorer s(DualEncoderConfig::from_json(j.at("config")), corpus::Vocab::load(dir / "vocab.tsv"));
    s.params_.load(dir / "params.bin");
    return s;
}

} // namespace atlas::gcs
