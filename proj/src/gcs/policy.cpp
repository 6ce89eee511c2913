#include "atlas/gcs/policy.hpp"

#include "atlas/util/hash.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace atlas::gcs {

using nlohmann::json;

namespace {
constexpr int kPolicyFormatVersion = 1;
}

json PolicyConfig::to_json() const {
    return json{{"embed_dim", embed_dim}, {"hidden_dim", hidden_dim}, {"seed", seed}};
}

PolicyConfig PolicyConfig::from_json(const json& j) {
    PolicyConfig c;
    c.embed_dim = j.at("embed_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

double PolicyChoice::entropy() const {
    double h = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        if (probs[i] > 0.0) {
            h -= probs[i] * std::log(probs[i]);
        }
    }
    return h;
}

Policy::Policy(PolicyConfig config, const corpus::Vocab& vocab, Matrix utter_embeddings, Matrix goal_embeddings)
    : config_(config), vocab_(vocab), utter_emb_(std::move(utter_embeddings)), goal_emb_(std::move(goal_embeddings)) {
    if (utter_emb_.rows() != goal_emb_.rows() || utter_emb_.cols() == 0 || goal_emb_.cols() == 0) {
        throw std::invalid_argument("vertex embeddings must share a non-empty dimension");
    }
    if (config_.embed_dim < 1 || config_.hidden_dim < 1) {
        throw std::invalid_argument("policy dimensions must be positive");
    }
    std::mt19937_64 rng(config_.seed);
    const auto E = config_.embed_dim;
    const auto H = config_.hidden_dim;
    const auto D = utter_emb_.rows();
    words_ = &params_.add_table("words", E, static_cast<Eigen::Index>(vocab_.size()), 0.1, rng);
    context_enc_ = nn::BiGruEncoder(params_, "context_enc", E, H, rng);
    goal_enc_ = nn::BiGruEncoder(params_, "goal_enc", D, H, rng);
    utter_enc_ = nn::BiGruEncoder(params_, "utter_enc", D, H, rng);
    goal_head_ = nn::Linear(params_, "goal_head", 6 * H, D, false, rng);
    utter_head_ = nn::Linear(params_, "utter_head", 6 * H, D, false, rng);
    goal_value_ = nn::Linear(params_, "goal_value", 6 * H, 1, true, rng);
    utter_value_ = nn::Linear(params_, "utter_value", 6 * H, 1, true, rng);
}

Policy::Policy(PolicyConfig config, dvae::DvaeModel& model)
    : Policy(config, model.vocab(), model.freeze_vertices().utter, model.params().find("goals")->value()) {}

std::vector<Var> Policy::encode_blocks(nn::Tape& tape, const RlState& state) const {
    std::vector<Var> ctx;
    for (size_t i = 0; i < state.context.size(); ++i) {
        if (i > 0) {
            ctx.push_back(tape.lookup(*words_, corpus::Vocab::kSep));
        }
        for (int id : vocab_.encode(state.context[i])) {
            ctx.push_back(tape.lookup(*words_, id));
        }
    }
    auto columns = [&](const Matrix& table, const std::vector<int>& ids) {
        std::vector<Var> out;
        for (int id : ids) {
            if (id < 0 || id >= table.cols()) {
                throw std::out_of_range("history vertex " + std::to_string(id) + " outside the embedding table");
            }
            out.push_back(tape.constant(table.col(id)));
        }
        return out;
    };
    return {context_enc_.encode(tape, ctx).final, goal_enc_.encode(tape, columns(goal_emb_, state.goal_history)).final,
            utter_enc_.encode(tape, columns(utter_emb_, state.utter_history)).final};
}

Var Policy::encode_state(nn::Tape& tape, const RlState& state) const {
    return nn::concat(encode_blocks(tape, state));
}

PolicyChoice Policy::choose(nn::Tape& tape, const Var& state, CandidateLevel level,
                            const std::vector<int>& candidates, dvae::SampleMode mode, std::mt19937_64* rng) const {
    if (candidates.empty()) {
        throw std::invalid_argument("policy invoked with no candidates");
    }
    const Matrix& table = level == CandidateLevel::session ? goal_emb_ : utter_emb_;
    Matrix cand(table.rows(), static_cast<Eigen::Index>(candidates.size()));
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i] < 0 || candidates[i] >= table.cols()) {
            throw std::out_of_range("candidate vertex " + std::to_string(candidates[i]) + " has no embedding");
        }
        cand.col(static_cast<Eigen::Index>(i)) = table.col(candidates[i]);
    }
    const nn::Linear& head = level == CandidateLevel::session ? goal_head_ : utter_head_;
    Var logits = nn::matmul_tn(tape.constant(std::move(cand)), head(tape, state));
    dvae::CategoricalSample s = dvae::sample_categorical(tape, logits, mode, 1.0, rng);
    PolicyChoice out;
    out.candidates = candidates;
    out.log_probs = s.log_probs;
    out.probs = s.log_probs.value().col(0).array().exp();
    out.index = static_cast<size_t>(s.index);
    out.id = candidates[out.index];
    return out;
}

Var Policy::value(nn::Tape& tape, const Var& state, CandidateLevel level) const {
    return level == CandidateLevel::session ? goal_value_(tape, state) : utter_value_(tape, state);
}

void Policy::save(const std::filesystem::path& dir, const json& provenance) const {
    std::filesystem::create_directories(dir);
    params_.save(dir / "params.bin");
    json manifest{{"format", "atlas-policy"},
                  {"version", kPolicyFormatVersion},
                  {"config", config_.to_json()},
                  {"vocab_digest", vocab_.digest()},
                  {"vertex_dim", utter_emb_.rows()},
                  {"utter_vertices", utter_emb_.cols()},
                  {"goals", goal_emb_.cols()},
                  {"fingerprint", fingerprint()},
                  {"provenance", provenance}};
    std::ofstream out(dir / "policy.json");
    out << manifest.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error("failed writing " + (dir / "policy.json").string());
    }
}

json Policy::read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "policy.json");
    if (!in) {
        throw std::runtime_error("no policy checkpoint at " + dir.string());
    }
    json manifest = json::parse(in);
    if (manifest.value("format", "") != "atlas-policy" || manifest.value("version", 0) != kPolicyFormatVersion) {
        throw std::runtime_error("unsupported policy format in " + dir.string());
    }
    return manifest;
}

Policy Policy::load(const std::filesystem::path& dir, dvae::DvaeModel& model) {
    json manifest = read_manifest(dir);
    if (manifest.at("vocab_digest").get<std::string>() != model.vocab().digest()) {
        throw std::runtime_error("policy was trained against a different vocabulary");
    }
    Policy p(PolicyConfig::from_json(manifest.at("config")), model);
    if (p.goal_emb_.cols() != manifest.at("goals").get<Eigen::Index>() ||
        p.utter_emb_.cols() != manifest.at("utter_vertices").get<Eigen::Index>()) {
        throw std::runtime_error("policy vertex counts do not match the structure model");
    }
    p.params_.load(dir / "params.bin");
    return p;
}

std::string Policy::fingerprint() const {
    util::Sha256 h;
    h.update(config_.to_json().dump());
    h.update(vocab_.digest());
    h.update(params_.digest());
    return h.hex_digest();
}

} // namespace atlas::gcs
