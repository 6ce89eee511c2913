#include "atlas/dvae/model.hpp"

#include "atlas/util/hash.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace atlas::dvae {

using nlohmann::json;

namespace {

const char* prior_name(UtterPrior p) { return p == UtterPrior::shortlist ? "shortlist" : "all_vertices"; }

UtterPrior parse_prior(const std::string& s) {
    if (s == "shortlist") {
        return UtterPrior::shortlist;
    }
    if (s == "all_vertices") {
        return UtterPrior::all_vertices;
    }
    throw std::invalid_argument("unknown utterance prior: " + s);
}


constexpr int kModelFormatVersion = 1;

} // namespace

json ModelConfig::to_json() const {
    return json{{"num_goals", num_goals},
                {"embed_dim", embed_dim},
                {"hidden_dim", hidden_dim},
                {"vertex_dim", vertex_dim},
                {"shortlist_k", shortlist_k},
                {"gcn_layers", gcn_layers},
                {"gcn_weighted", gcn_weighted},
                {"dropout", dropout},
                {"utter_prior", prior_name(utter_prior)},
                {"freeze_phrase_encoder", freeze_phrase_encoder},
                {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    c.num_goals = j.value("num_goals", c.num_goals);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.vertex_dim = j.value("vertex_dim", c.vertex_dim);
    c.shortlist_k = j.value("shortlist_k", c.shortlist_k);
    c.gcn_layers = j.value("gcn_layers", c.gcn_layers);
    c.gcn_weighted = j.value("gcn_weighted", c.gcn_weighted);
    c.dropout = j.value("dropout", c.dropout);
    c.utter_prior = parse_prior(j.value("utter_prior", std::string("shortlist")));
    c.freeze_phrase_encoder = j.value("freeze_phrase_encoder", c.freeze_phrase_encoder);
    c.seed = j.value("seed", c.seed);
    return c;
}

Adjacency undirected_adjacency(size_t vertex_count, const std::vector<std::pair<int, int>>& edges) {
    std::vector<std::set<int>> sets(vertex_count);
    for (auto [a, b] : edges) {
        if (a < 0 || b < 0 || static_cast<size_t>(a) >= vertex_count || static_cast<size_t>(b) >= vertex_count) {
            throw std::out_of_range("edge endpoint outside vertex range");
        }
        if (a == b) {
            continue;
        }
        sets[static_cast<size_t>(a)].insert(b);
        sets[static_cast<size_t>(b)].insert(a);
    }
    Adjacency adj(vertex_count);
    for (size_t i = 0; i < vertex_count; ++i) {
        adj[i].assign(sets[i].begin(), sets[i].end());
    }
    return adj;
}

Adjacency undirected_adjacency(const phrases::PhraseGraph& graph) {
    std::vector<std::pair<int, int>> edges;
    edges.reserve(graph.edges.size());
    for (const auto& e : graph.edges) {
        edges.emplace_back(e.src, e.dst);
    }
    return undirected_adjacency(graph.vertex_count, edges);
}

Matrix gcn_propagate(const Matrix& h0, const Adjacency& adjacency, int layers, const std::vector<Matrix>* transforms) {
    if (static_cast<size_t>(h0.cols()) != adjacency.size()) {
        throw std::invalid_argument("gcn_propagate: embedding count does not match adjacency");
    }
    Matrix h = h0;
    for (int j = 0; j < layers; ++j) {
        Matrix next(h.rows(), h.cols());
        for (Eigen::Index v = 0; v < h.cols(); ++v) {
            Vector s = Vector::Zero(h.rows());
            for (int nb : adjacency[static_cast<size_t>(v)]) {
                s += h.col(nb);
            }
            if (transforms != nullptr) {
                s = (*transforms)[static_cast<size_t>(j)] * s;
            }
            next.col(v) = s.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
        }
        h = std::move(next);
    }
    return h;
}

CategoricalSample sample_categorical(Tape& tape, const Var& logits, SampleMode mode, double tau,
                                     std::mt19937_64* rng) {
    if (logits.rows() == 0) {
        throw std::invalid_argument("cannot sample from an empty support");
    }
    CategoricalSample out;
    out.log_probs = nn::log_softmax(logits);
    const Eigen::Index k = logits.rows();
    if (mode == SampleMode::argmax) {
        out.index = static_cast<int>(nn::argmax_lowest(logits.value()));
        Matrix hard = Matrix::Zero(k, 1);
        hard(out.index, 0) = 1.0;
        out.selector = tape.constant(std::move(hard));
        return out;
    }
    if (rng == nullptr) {
        throw std::invalid_argument("sampling requires a random generator");
    }
    if (!(tau > 0.0)) {
        throw std::invalid_argument("gumbel temperature must be positive");
    }
    std::uniform_real_distribution<double> unif(std::numeric_limits<double>::min(), 1.0);
    Matrix gumbel(k, 1);
    for (Eigen::Index i = 0; i < k; ++i) {
        gumbel(i, 0) = -std::log(-std::log(unif(*rng)));
    }
    out.index = static_cast<int>(nn::argmax_lowest(logits.value() + gumbel));
    Var soft = nn::softmax(nn::scale(nn::add(logits, tape.constant(gumbel)), 1.0 / tau));
    out.selector = mode == SampleMode::sample ? nn::straight_through(soft, out.index) : soft;
    return out;
}

Var kl_to_uniform(const Var& log_probs, double support) {
    Var q = nn::exp(log_probs);
    return nn::sum(nn::cmul(q, nn::add_scalar(log_probs, std::log(support))));
}

double kl_to_uniform(const Vector& probs, double support) {
    double kl = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        if (probs[i] > 0.0) {
            kl += probs[i] * (std::log(probs[i]) + std::log(support));
        }
    }
    return kl;
}

DvaeModel::DvaeModel(ModelConfig config, corpus::Vocab vocab, std::vector<phrases::Phrase> phrases,
                     phrases::PhraseGraph phrase_graph)
    : config_(config), vocab_(std::move(vocab)), phrases_(std::move(phrases)) {
    if (config_.num_goals < 1) {
        throw std::invalid_argument("num_goals must be at least 1");
    }
    if (phrases_.empty()) {
        throw std::invalid_argument("model needs at least one utterance-level vertex");
    }
    if (config_.gcn_layers < 0 || config_.shortlist_k < 1) {
        throw std::invalid_argument("invalid gcn_layers or shortlist_k");
    }
    for (size_t i = 0; i < phrases_.size(); ++i) {
        if (phrases_[i].id != static_cast<int>(i)) {
            throw std::invalid_argument("phrase ids must be dense and ordered");
        }
        phrase_ids_.push_back(vocab_.encode(phrases_[i].tokens));
    }
    index_ = retrieval::ShortlistIndex(phrases_);
    set_phrase_graph(std::move(phrase_graph));

    std::mt19937_64 rng(config_.seed);
    const auto E = config_.embed_dim;
    const auto H = config_.hidden_dim;
    const auto D = config_.vertex_dim;
    words_ = &params_.add_table("words", E, static_cast<Eigen::Index>(vocab_.size()), 0.1, rng);
    latent_ = &params_.add_table("latent", D, static_cast<Eigen::Index>(phrases_.size()), 0.1, rng);
    goals_ = &params_.add("goals", D, config_.num_goals, 0.1, rng);
    phrase_encoder_ = nn::BiGruEncoder(params_, "phrase_enc", E, H, rng);
    utterance_encoder_ = nn::BiGruEncoder(params_, "utter_enc", E, H, rng);
    vertex_seq_encoder_ = nn::BiGruEncoder(params_, "vseq_enc", D, H, rng);
    coupling_ = nn::Linear(params_, "coupling", 2 * H + D, D, false, rng);
    utter_proj_ = nn::Linear(params_, "utter_proj", 2 * H, D, true, rng);
    session_proj_ = nn::Linear(params_, "session_proj", 2 * H, D, true, rng);
    init_proj_ = nn::Linear(params_, "init_proj", 2 * D, H, true, rng);
    decoder_ = nn::GruCell(params_, "decoder", E, H, rng);
    output_ = nn::Linear(params_, "output", H, static_cast<Eigen::Index>(vocab_.size()), true, rng);
    if (config_.gcn_weighted) {
        for (int j = 0; j < config_.gcn_layers; ++j) {
            gcn_transforms_.emplace_back(params_, "gcn." + std::to_string(j), D, D, false, rng);
        }
    }
    if (config_.freeze_phrase_encoder) {
        for (auto& p : params_.parameters()) {
            if (p.name().rfind("phrase_enc.", 0) == 0) {
                p.frozen = true;
            }
        }
    }
}

void DvaeModel::set_phrase_graph(phrases::PhraseGraph graph) {
    if (graph.vertex_count != phrases_.size()) {
        throw std::invalid_argument("phrase graph vertex count does not match the phrase list");
    }
    phrase_graph_ = std::move(graph);
    adjacency_ = undirected_adjacency(phrase_graph_);
}

std::vector<int> DvaeModel::shortlist(const corpus::TokenList& tokens) const {
    return index_.shortlist(tokens, static_cast<size_t>(config_.shortlist_k));
}

namespace {
Var maybe_dropout(Forward& f, const Var& x, double rate) {
    if (f.train && f.rng != nullptr && rate > 0.0) {
        return nn::dropout(x, rate, *f.rng);
    }
    return x;
}
} // namespace

Var DvaeModel::word(Forward& f, int token_id) {
    if (token_id < 0 || static_cast<size_t>(token_id) >= vocab_.size()) {
        token_id = corpus::Vocab::kUnk;
    }
    return f.tape.lookup(*words_, token_id);
}

Var DvaeModel::phrase_encoding(Forward& f, int n) {
    std::vector<Var> xs;
    for (int id : phrase_ids_.at(static_cast<size_t>(n))) {
        xs.push_back(word(f, id));
    }
    return phrase_encoder_.encode(f.tape, xs).mean;
}

Var DvaeModel::utter_vertex_embedding(Forward& f, int n, bool trainable_latent) {
    if (n < 0 || n >= num_utter_vertices()) {
        throw std::out_of_range("unknown utterance-level vertex " + std::to_string(n));
    }
    Var e = phrase_encoding(f, n);
    Var v = f.tape.lookup(*latent_, n, trainable_latent);
    return coupling_(f.tape, nn::concat(e, v));
}

Var DvaeModel::encode_utterance(Forward& f, const corpus::TokenIds& tokens) {
    std::vector<Var> xs;
    xs.reserve(tokens.size());
    for (int id : tokens) {
        xs.push_back(maybe_dropout(f, word(f, id), config_.dropout));
    }
    Var h = utterance_encoder_.encode(f.tape, xs).final;
    return nn::tanh(utter_proj_(f.tape, h));
}

Var DvaeModel::goal_table(Forward& f) { return f.tape.parameter(*goals_); }

void DvaeModel::prepare_vertices(Forward& f, const std::vector<int>& active) {
    for (int n : active) {
        if (n < 0 || n >= num_utter_vertices()) {
            throw std::out_of_range("unknown utterance-level vertex " + std::to_string(n));
        }
    }
    if (f.frozen != nullptr) {
        for (int n : active) {
            if (!f.utter.contains(n)) {
                f.utter.emplace(n, f.tape.constant(f.frozen->utter.col(n)));
                f.structure.emplace(n, f.tape.constant(f.frozen->structure.col(n)));
            }
        }
        return;
    }
    const int L = config_.gcn_layers;
    if (f.gcn.size() < static_cast<size_t>(L + 1)) {
        f.gcn.resize(static_cast<size_t>(L + 1));
    }
    const std::unordered_set<int> latent_trainable(active.begin(), active.end());

    // Receptive field of each layer, from the output layer back to h^0.
    std::vector<std::set<int>> need(static_cast<size_t>(L + 1));
    for (int n : active) {
        if (!f.structure.contains(n)) {
            need[static_cast<size_t>(L)].insert(n);
        }
    }
    for (int j = L; j > 0; --j) {
        auto& below = need[static_cast<size_t>(j - 1)];
        for (int n : need[static_cast<size_t>(j)]) {
            if (f.gcn[static_cast<size_t>(j)].contains(n)) {
                continue;
            }
            for (int nb : adjacency_[static_cast<size_t>(n)]) {
                below.insert(nb);
            }
        }
    }
    for (int n : need[0]) {
        if (!f.utter.contains(n)) {
            f.utter.emplace(n, utter_vertex_embedding(f, n, latent_trainable.contains(n)));
        }
        f.gcn[0].emplace(n, f.utter.at(n));
    }
    for (int n : active) {
        if (!f.utter.contains(n)) {
            f.utter.emplace(n, utter_vertex_embedding(f, n, true));
        }
        f.gcn[0].emplace(n, f.utter.at(n));
    }
    const auto D = static_cast<Eigen::Index>(config_.vertex_dim);
    for (int j = 1; j <= L; ++j) {
        auto& prev = f.gcn[static_cast<size_t>(j - 1)];
        auto& cur = f.gcn[static_cast<size_t>(j)];
        for (int n : need[static_cast<size_t>(j)]) {
            if (cur.contains(n)) {
                continue;
            }
            std::vector<Var> terms;
            for (int nb : adjacency_[static_cast<size_t>(n)]) {
                terms.push_back(prev.at(nb));
            }
            Var s = terms.empty() ? f.tape.constant(Matrix::Zero(D, 1)) : nn::sum(terms);
            if (config_.gcn_weighted) {
                s = gcn_transforms_[static_cast<size_t>(j - 1)](f.tape, s);
            }
            cur.emplace(n, nn::sigmoid(s));
        }
    }
    for (int n : active) {
        if (!f.structure.contains(n)) {
            f.structure.emplace(n, f.gcn[static_cast<size_t>(L)].at(n));
        }
    }
}

CategoricalSample DvaeModel::recognize_utterance(Forward& f, const corpus::TokenIds& tokens,
                                                 const std::vector<int>& shortlist) {
    if (shortlist.empty()) {
        throw std::invalid_argument("empty shortlist");
    }
    prepare_vertices(f, shortlist);
    std::vector<Var> cols;
    cols.reserve(shortlist.size());
    for (int n : shortlist) {
        cols.push_back(f.utter.at(n));
    }
    Var ex = encode_utterance(f, tokens);
    Var logits = nn::matmul_tn(nn::hstack(cols), ex);
    return sample_categorical(f.tape, logits, f.mode, f.tau, f.rng);
}

Var DvaeModel::session_encoding(Forward& f, const std::vector<Var>& structure_seq) {
    if (structure_seq.empty()) {
        throw std::invalid_argument("empty vertex sequence");
    }
    Var h = vertex_seq_encoder_.encode(f.tape, structure_seq).final;
    return nn::tanh(session_proj_(f.tape, h));
}

CategoricalSample DvaeModel::recognize_session(Forward& f, const std::vector<Var>& structure_seq) {
    Var e = session_encoding(f, structure_seq);
    Var logits = nn::matmul_tn(goal_table(f), e);
    return sample_categorical(f.tape, logits, f.mode, f.tau, f.rng);
}

Var DvaeModel::decoder_init(Forward& f, const Var& utter_vec, const Var& goal_vec) {
    return nn::tanh(init_proj_(f.tape, nn::concat(utter_vec, goal_vec)));
}

Var DvaeModel::reconstruct_nll(Forward& f, const Var& init_hidden, const corpus::TokenIds& tokens) {
    std::vector<Var> terms;
    terms.reserve(tokens.size() + 1);
    Var h = init_hidden;
    int input = corpus::Vocab::kBos;
    for (size_t t = 0; t <= tokens.size(); ++t) {
        const int target = t < tokens.size() ? tokens[t] : corpus::Vocab::kEos;
        h = decoder_.step(f.tape, maybe_dropout(f, word(f, input), config_.dropout), h);
        Var logp = nn::log_softmax(output_(f.tape, h));
        terms.push_back(nn::pick(logp, target));
        input = target;
    }
    return nn::negate(nn::sum(terms));
}

corpus::TokenIds DvaeModel::greedy_decode(Forward& f, const Var& init_hidden, size_t max_len) {
    corpus::TokenIds out;
    Var h = init_hidden;
    int input = corpus::Vocab::kBos;
    for (size_t t = 0; t < max_len; ++t) {
        h = decoder_.step(f.tape, word(f, input), h);
        Var logits = output_(f.tape, h);
        const int next = static_cast<int>(nn::argmax_lowest(logits.value()));
        if (next == corpus::Vocab::kEos) {
            break;
        }
        out.push_back(next);
        input = next;
    }
    return out;
}

ElboTerms DvaeModel::elbo(Forward& f, const std::vector<corpus::TokenIds>& session,
                          const std::vector<std::vector<int>>* shortlists) {
    if (session.empty()) {
        throw std::invalid_argument("elbo needs at least one utterance");
    }
    std::vector<std::vector<int>> lists;
    if (shortlists != nullptr) {
        if (shortlists->size() != session.size()) {
            throw std::invalid_argument("one shortlist per utterance required");
        }
        lists = *shortlists;
    } else {
        for (const auto& utt : session) {
            lists.push_back(shortlist(vocab_.decode(utt)));
        }
    }
    std::vector<int> active;
    for (const auto& l : lists) {
        active.insert(active.end(), l.begin(), l.end());
    }
    prepare_vertices(f, active);

    ElboTerms out;
    std::vector<Var> utter_vecs;
    std::vector<Var> struct_vecs;
    std::vector<Var> kls;
    for (size_t i = 0; i < session.size(); ++i) {
        const auto& list = lists[i];
        CategoricalSample s = recognize_utterance(f, session[i], list);
        std::vector<Var> ucols;
        std::vector<Var> scols;
        for (int n : list) {
            ucols.push_back(f.utter.at(n));
            scols.push_back(f.structure.at(n));
        }
        utter_vecs.push_back(nn::matmul(nn::hstack(ucols), s.selector));
        struct_vecs.push_back(nn::matmul(nn::hstack(scols), s.selector));
        const double support = config_.utter_prior == UtterPrior::shortlist
                                   ? static_cast<double>(list.size())
                                   : static_cast<double>(num_utter_vertices());
        kls.push_back(kl_to_uniform(s.log_probs, support));
        out.kl_utter += kls.back().scalar();

        UtteranceRecognition rec;
        rec.shortlist = list;
        rec.posterior = s.log_probs.value().col(0).array().exp();
        rec.vertex = list[static_cast<size_t>(s.index)];
        out.recognition.utterances.push_back(std::move(rec));
    }
    CategoricalSample g = recognize_session(f, struct_vecs);
    Var goal_vec = nn::matmul(goal_table(f), g.selector);
    Var kl_g = kl_to_uniform(g.log_probs, static_cast<double>(config_.num_goals));
    out.kl_sess = kl_g.scalar();
    out.recognition.goal_posterior = g.log_probs.value().col(0).array().exp();
    out.recognition.goal = g.index;

    std::vector<Var> nlls;
    for (size_t i = 0; i < session.size(); ++i) {
        Var init = decoder_init(f, utter_vecs[i], goal_vec);
        nlls.push_back(reconstruct_nll(f, init, session[i]));
        out.recon_nll += nlls.back().scalar();
        out.tokens += session[i].size() + 1;
    }
    Var total = nn::add(nn::add(nn::sum(nlls), nn::sum(kls)), kl_g);
    out.total = total;
    return out;
}

RecognitionResult DvaeModel::recognize(Forward& f, const std::vector<corpus::TokenIds>& session) {
    if (session.empty()) {
        throw std::invalid_argument("cannot recognize an empty session");
    }
    const SampleMode saved = f.mode;
    f.mode = SampleMode::argmax;
    RecognitionResult out;
    std::vector<Var> struct_vecs;
    for (const auto& utt : session) {
        UtteranceRecognition rec;
        rec.shortlist = shortlist(vocab_.decode(utt));
        CategoricalSample s = recognize_utterance(f, utt, rec.shortlist);
        rec.posterior = s.log_probs.value().col(0).array().exp();
        rec.vertex = rec.shortlist[static_cast<size_t>(s.index)];
        struct_vecs.push_back(f.structure.at(rec.vertex));
        out.utterances.push_back(std::move(rec));
    }
    CategoricalSample g = recognize_session(f, struct_vecs);
    out.goal_posterior = g.log_probs.value().col(0).array().exp();
    out.goal = g.index;
    f.mode = saved;
    return out;
}

std::vector<corpus::TokenIds> DvaeModel::reconstruct(Forward& f, const std::vector<corpus::TokenIds>& session,
                                                     size_t max_len) {
    RecognitionResult r = recognize(f, session);
    Var goal_vec = nn::column(goal_table(f), r.goal);
    std::vector<corpus::TokenIds> out;
    for (const auto& u : r.utterances) {
        out.push_back(greedy_decode(f, decoder_init(f, f.utter.at(u.vertex), goal_vec), max_len));
    }
    return out;
}

FrozenVertices DvaeModel::freeze_vertices() {
    const int n = num_utter_vertices();
    Tape tape;
    Forward f{tape};
    std::vector<int> all(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        all[static_cast<size_t>(i)] = i;
    }
    prepare_vertices(f, all);
    FrozenVertices fv;
    fv.utter.resize(config_.vertex_dim, n);
    fv.structure.resize(config_.vertex_dim, n);
    for (int i = 0; i < n; ++i) {
        fv.utter.col(i) = f.utter.at(i).value().col(0);
        fv.structure.col(i) = f.structure.at(i).value().col(0);
    }
    return fv;
}

void DvaeModel::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    params_.save(dir / "params.bin");
    vocab_.save(dir / "vocab.tsv");
    phrases::save_phrases(phrases_, dir / "phrases.jsonl");
    phrases::save_phrase_graph(phrase_graph_, dir / "phrase_graph.jsonl");
    json manifest{{"format", "atlas-dvae"},
                  {"version", kModelFormatVersion},
                  {"config", config_.to_json()},
                  {"vocab_digest", vocab_.digest()},
                  {"fingerprint", fingerprint()}};
    std::ofstream out(dir / "model.json");
    out << manifest.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error("failed writing " + (dir / "model.json").string());
    }
}

DvaeModel DvaeModel::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) {
        throw std::runtime_error("no model checkpoint at " + dir.string());
    }
    json manifest = json::parse(in);
    if (manifest.value("format", "") != "atlas-dvae" || manifest.value("version", 0) != kModelFormatVersion) {
        throw std::runtime_error("unsupported checkpoint format in " + dir.string());
    }
    corpus::Vocab vocab = corpus::Vocab::load(dir / "vocab.tsv");
    if (vocab.digest() != manifest.at("vocab_digest").get<std::string>()) {
        throw std::runtime_error("checkpoint vocabulary does not match its manifest");
    }
    auto phrases = phrases::load_phrases(dir / "phrases.jsonl");
    auto graph = phrases::load_phrase_graph(dir / "phrase_graph.jsonl", phrases.size());
    DvaeModel model(ModelConfig::from_json(manifest.at("config")), std::move(vocab), std::move(phrases),
                    std::move(graph));
    model.params_.load(dir / "params.bin");
    return model;
}

std::string DvaeModel::fingerprint() const {
    util::Sha256 h;
    h.update(config_.to_json().dump());
    h.update(vocab_.digest());
    for (const auto& p : phrases_) {
        h.update(phrases::phrase_key(p.tokens));
        h.update("\n");
    }
    for (const auto& e : phrase_graph_.edges) {
        h.update(std::to_string(e.src) + ">" + std::to_string(e.dst) + ":" + std::to_string(e.count) + "\n");
    }
    h.update(params_.digest());
    return h.hex_digest();
}

} // namespace atlas::dvae
