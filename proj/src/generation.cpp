#include "atlas/generation.hpp"

#include "atlas/util/hash.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace atlas::generation {

using nlohmann::json;
using nn::Var;

namespace {

constexpr int kGeneratorFormatVersion = 1;

bool never_emitted(int token) {
    return token == corpus::Vocab::kPad || token == corpus::Vocab::kBos || token == corpus::Vocab::kSep;
}

} // namespace

json GeneratorConfig::to_json() const {
    return json{{"embed_dim", embed_dim}, {"hidden_dim", hidden_dim}, {"max_len", max_len},
                {"dropout", dropout},     {"seed", seed}};
}

GeneratorConfig GeneratorConfig::from_json(const json& j) {
    GeneratorConfig c;
    c.embed_dim = j.at("embed_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.max_len = j.at("max_len").get<size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

std::vector<TrainingPair> build_pairs(const corpus::SessionStore& store, const std::vector<phrases::Phrase>& bound,
                                      const phrases::ParserAdapter* adapter) {
    std::map<std::string, int> bound_id;
    for (const auto& p : bound) {
        bound_id.emplace(phrases::phrase_key(p.tokens), p.id);
    }
    const phrases::FallbackParser fallback;
    std::vector<TrainingPair> out;
    for (const auto& s : store.sessions()) {
        for (size_t i = 1; i < s.utterances.size(); ++i) {
            const auto& reply = s.utterances[i];
            auto extracted = phrases::extract_phrases(reply, phrases::parse(reply, adapter, fallback));
            TrainingPair p;
            p.input.last_user_utterance = s.utterances[i - 1].tokens;
            p.reply = reply.tokens;
            int best = std::numeric_limits<int>::max();
            for (const auto& ph : extracted) {
                auto it = bound_id.find(phrases::phrase_key(ph));
                if (it != bound_id.end() && it->second < best) {
                    best = it->second;
                    p.input.phrase = ph;
                }
            }
            if (best == std::numeric_limits<int>::max()) {
                if (extracted.empty()) {
                    p.placeholder = true;
                } else {
                    p.input.phrase = extracted.front();
                }
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

Generator::Generator(GeneratorConfig config, corpus::Vocab vocab) : config_(config), vocab_(std::move(vocab)) {
    if (config_.embed_dim < 1 || config_.hidden_dim < 1 || config_.max_len < 1) {
        throw std::invalid_argument("generator dimensions and max_len must be positive");
    }
    std::mt19937_64 rng(config_.seed);
    const auto E = config_.embed_dim;
    const auto H = config_.hidden_dim;
    words_ = &params_.add_table("words", E, static_cast<Eigen::Index>(vocab_.size()), 0.1, rng);
    encoder_ = nn::BiGruEncoder(params_, "encoder", E, H, rng);
    init_ = nn::Linear(params_, "init", 2 * H, H, true, rng);
    attn_ = nn::Linear(params_, "attn", 2 * H, H, false, rng);
    combine_ = nn::Linear(params_, "combine", 3 * H, H, true, rng);
    decoder_ = nn::GruCell(params_, "decoder", E, H, rng);
    output_ = nn::Linear(params_, "output", H, static_cast<Eigen::Index>(vocab_.size()), true, rng);
}

TokenIds Generator::encode_input(const GeneratorInput& input) const {
    TokenIds ids = vocab_.encode(input.last_user_utterance);
    ids.push_back(corpus::Vocab::kSep);
    TokenIds ph = vocab_.encode(input.phrase);
    ids.insert(ids.end(), ph.begin(), ph.end());
    return ids;
}

Var Generator::embed(nn::Tape& tape, int token, std::mt19937_64* rng) const {
    const int id = token >= 0 && static_cast<size_t>(token) < vocab_.size() ? token : corpus::Vocab::kUnk;
    Var e = tape.lookup(*words_, id);
    return rng != nullptr ? nn::dropout(e, config_.dropout, *rng) : e;
}

Generator::Memory Generator::encode(nn::Tape& tape, const TokenIds& input, std::mt19937_64* rng) const {
    std::vector<Var> xs;
    xs.reserve(input.size());
    for (int t : input) {
        xs.push_back(embed(tape, t, rng));
    }
    nn::Encoding enc = encoder_.encode(tape, xs);
    Memory m;
    m.states = nn::hstack(enc.states);
    m.keys = attn_(tape, m.states);
    m.init = nn::tanh(init_(tape, enc.final));
    return m;
}

std::pair<Var, Var> Generator::step(nn::Tape& tape, const Memory& m, int token, const Var& h,
                                    std::mt19937_64* rng) const {
    Var next = decoder_.step(tape, embed(tape, token, rng), h);
    Var weights = nn::softmax(nn::matmul_tn(m.keys, next));
    Var context = nn::matmul(m.states, weights);
    Var mixed = nn::tanh(combine_(tape, nn::concat(context, next)));
    return {next, output_(tape, mixed)};
}

Var Generator::nll(nn::Tape& tape, const TokenIds& input, const TokenIds& reply, std::mt19937_64* rng) const {
    if (input.empty()) {
        throw std::invalid_argument("generator input must not be empty");
    }
    Memory m = encode(tape, input, rng);
    Var h = m.init;
    std::vector<Var> terms;
    int prev = corpus::Vocab::kBos;
    for (size_t t = 0; t <= reply.size(); ++t) {
        auto [next, logits] = step(tape, m, prev, h, rng);
        h = next;
        const int target = t < reply.size() ? reply[t] : corpus::Vocab::kEos;
        terms.push_back(nn::negate(nn::pick(nn::log_softmax(logits), target)));
        prev = target;
    }
    return nn::sum(terms);
}

TokenList Generator::generate(const GeneratorInput& input, Decode decode) const {
    return vocab_.decode(generate_ids(encode_input(input), decode));
}

TokenIds Generator::generate_ids(const TokenIds& input, Decode decode) const {
    if (input.empty()) {
        throw std::invalid_argument("generator input must not be empty");
    }
    const size_t k = decode.kind == Decode::Kind::greedy ? 1 : std::max<size_t>(decode.beam_size, 1);
    nn::Tape tape;
    Memory m = encode(tape, input, nullptr);

    struct Hyp {
        TokenIds tokens;
        double score = 0.0;
        Var h;
    };
    std::vector<Hyp> live{{{}, 0.0, m.init}};
    std::vector<Hyp> finished;
    for (size_t t = 0; t < config_.max_len && !live.empty() && finished.size() < k; ++t) {
        struct Cand {
            double score;
            size_t beam;
            int token;
            Var h;
        };
        std::vector<Cand> cands;
        for (size_t b = 0; b < live.size(); ++b) {
            const int prev = live[b].tokens.empty() ? corpus::Vocab::kBos : live[b].tokens.back();
            auto [next, logits] = step(tape, m, prev, live[b].h, nullptr);
            const nn::Matrix lp = nn::log_softmax(logits).value();
            for (Eigen::Index v = 0; v < lp.rows(); ++v) {
                if (!never_emitted(static_cast<int>(v))) {
                    cands.push_back({live[b].score + lp(v, 0), b, static_cast<int>(v), next});
                }
            }
        }
        const size_t keep = std::min(k - finished.size(), cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Cand& a, const Cand& b) {
                              if (a.score != b.score) {
                                  return a.score > b.score;
                              }
                              return a.beam != b.beam ? a.beam < b.beam : a.token < b.token;
                          });
        std::vector<Hyp> next_live;
        for (size_t c = 0; c < keep; ++c) {
            Hyp h{live[cands[c].beam].tokens, cands[c].score, cands[c].h};
            if (cands[c].token == corpus::Vocab::kEos) {
                finished.push_back(std::move(h));
            } else {
                h.tokens.push_back(cands[c].token);
                next_live.push_back(std::move(h));
            }
        }
        live = std::move(next_live);
    }
    finished.insert(finished.end(), live.begin(), live.end());
    auto best = std::max_element(finished.begin(), finished.end(),
                                 [](const Hyp& a, const Hyp& b) { return a.score < b.score; });
    return best == finished.end() ? TokenIds{} : best->tokens;
}

void Generator::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    params_.save(dir / "params.bin");
    vocab_.save(dir / "vocab.tsv");
    json manifest{{"format", "atlas-generator"},
                  {"version", kGeneratorFormatVersion},
                  {"config", config_.to_json()},
                  {"vocab_digest", vocab_.digest()},
                  {"fingerprint", fingerprint()}};
    std::ofstream out(dir / "generator.json");
    out << manifest.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error("failed writing " + (dir / "generator.json").string());
    }
}

Generator Generator::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "generator.json");
    if (!in) {
        throw std::runtime_error("no generator checkpoint at " + dir.string());
    }
    json manifest = json::parse(in);
    if (manifest.value("format", "") != "atlas-generator" || manifest.value("version", 0) != kGeneratorFormatVersion) {
        throw std::runtime_error("unsupported generator format in " + dir.string());
    }
    corpus::Vocab vocab = corpus::Vocab::load(dir / "vocab.tsv");
    if (vocab.digest() != manifest.at("vocab_digest").get<std::string>()) {
        throw std::runtime_error("generator vocabulary does not match its manifest");
    }
    Generator g(GeneratorConfig::from_json(manifest.at("config")), std::move(vocab));
    g.params_.load(dir / "params.bin");
    return g;
}

std::string Generator::fingerprint() const {
    util::Sha256 h;
    h.update(config_.to_json().dump());
    h.update(vocab_.digest());
    h.update(params_.digest());
    return h.hex_digest();
}

json PretrainConfig::to_json() const {
    return json{{"epochs", epochs}, {"batch_size", batch_size}, {"lr", adam.lr}, {"clip_norm", adam.clip_norm},
                {"seed", seed}};
}

json PretrainMetrics::to_json() const {
    return json{{"epoch", epoch}, {"nll_per_token", nll_per_token}, {"grad_norm", grad_norm}, {"seconds", seconds}};
}

std::vector<PretrainMetrics> pretrain(Generator& gen, const std::vector<TrainingPair>& pairs,
                                      const PretrainConfig& config, const PretrainCallback& on_epoch) {
    if (pairs.empty()) {
        throw std::invalid_argument("no generator training pairs");
    }
    if (config.epochs < 1 || config.batch_size < 1) {
        throw std::invalid_argument("epochs and batch_size must be positive");
    }
    std::vector<TokenIds> inputs;
    std::vector<TokenIds> replies;
    for (const auto& p : pairs) {
        inputs.push_back(gen.encode_input(p.input));
        replies.push_back(gen.vocab().encode(p.reply));
    }
    nn::Adam opt(gen.params(), config.adam);
    std::mt19937_64 rng(config.seed);
    std::vector<size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::ofstream log;
    if (config.checkpoint_dir) {
        std::filesystem::create_directories(*config.checkpoint_dir);
        log.open(*config.checkpoint_dir / "metrics.jsonl");
    }
    std::vector<PretrainMetrics> history;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        PretrainMetrics m;
        m.epoch = epoch;
        double nll = 0.0;
        size_t tokens = 0;
        size_t batches = 0;
        for (size_t lo = 0; lo < order.size(); lo += config.batch_size, ++batches) {
            const size_t hi = std::min(order.size(), lo + config.batch_size);
            nn::Tape tape;
            std::vector<Var> terms;
            size_t batch_tokens = 0;
            for (size_t i = lo; i < hi; ++i) {
                terms.push_back(gen.nll(tape, inputs[order[i]], replies[order[i]], &rng));
                batch_tokens += replies[order[i]].size() + 1;
            }
            Var loss = nn::scale(nn::sum(terms), 1.0 / static_cast<double>(batch_tokens));
            const double value = loss.scalar();
            if (!std::isfinite(value)) {
                throw std::runtime_error("non-finite generator loss at epoch " + std::to_string(epoch));
            }
            tape.backward(loss);
            if (!gen.params().grads_finite()) {
                throw std::runtime_error("non-finite generator gradient at epoch " + std::to_string(epoch));
            }
            m.grad_norm += opt.step();
            nll += value * static_cast<double>(batch_tokens);
            tokens += batch_tokens;
        }
        m.nll_per_token = nll / static_cast<double>(tokens);
        m.grad_norm /= static_cast<double>(batches);
        m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (config.checkpoint_dir) {
            log << m.to_json().dump() << '\n';
            log.flush();
        }
        history.push_back(m);
        if (on_epoch) {
            on_epoch(m);
        }
    }
    if (config.checkpoint_dir) {
        gen.save(*config.checkpoint_dir);
        std::ofstream(*config.checkpoint_dir / "pretrain_config.json") << config.to_json().dump(2) << '\n';
    }
    return history;
}

double evaluate_nll(const Generator& gen, const std::vector<TrainingPair>& pairs) {
    double nll = 0.0;
    size_t tokens = 0;
    for (const auto& p : pairs) {
        nn::Tape tape;
        const TokenIds reply = gen.vocab().encode(p.reply);
        nll += gen.nll(tape, gen.encode_input(p.input), reply).scalar();
        tokens += reply.size() + 1;
    }
    return tokens == 0 ? 0.0 : nll / static_cast<double>(tokens);
}

} // namespace atlas::generation
