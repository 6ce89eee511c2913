#include "atlas/graph.hpp"

#include "atlas/dvae/model.hpp"
#include "atlas/util/hash.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

namespace atlas::graph {

using nlohmann::json;

namespace {

constexpr int kGraphFormatVersion = 1;

bool by_weight(const Neighbor& a, const Neighbor& b) { return a.weight != b.weight ? a.weight > b.weight : a.id < b.id; }

json edge_json(const char* kind, const Edge& e) {
    return json{{"kind", kind}, {"src", e.from}, {"dst", e.to}, {"weight", e.weight}, {"count", e.count}};
}

} // namespace

std::vector<SessionAssignment> map_corpus(dvae::DvaeModel& model, const corpus::SessionStore& store,
                                          const corpus::Vocab* store_vocab) {
    if (store_vocab != nullptr && store_vocab->digest() != model.vocab().digest()) {
        throw std::runtime_error("store vocabulary does not match the checkpoint vocabulary");
    }
    dvae::FrozenVertices frozen = model.freeze_vertices();
    std::vector<SessionAssignment> out;
    out.reserve(store.size());
    for (const auto& s : store.sessions()) {
        nn::Tape tape;
        dvae::Forward f{tape};
        f.frozen = &frozen;
        std::vector<corpus::TokenIds> ids;
        for (const auto& u : s.utterances) {
            ids.push_back(model.encode(u.tokens));
        }
        dvae::RecognitionResult r = model.recognize(f, ids);
        SessionAssignment a;
        for (const auto& u : r.utterances) {
            a.z.push_back(u.vertex);
        }
        a.g = r.goal;
        out.push_back(std::move(a));
    }
    return out;
}

void save_assignments(const std::vector<SessionAssignment>& a, const std::filesystem::path& path) {
    std::ofstream out(path);
    for (const auto& s : a) {
        out << json{{"z", s.z}, {"g", s.g}}.dump() << '\n';
    }
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

std::vector<SessionAssignment> load_assignments(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    std::vector<SessionAssignment> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json j = json::parse(line);
        out.push_back({j.at("z").get<std::vector<int>>(), j.at("g").get<int>()});
    }
    return out;
}

void CoOccurrenceStats::add(const SessionAssignment& a) {
    ++cnt_sess[a.g];
    for (size_t i = 0; i < a.z.size(); ++i) {
        ++cnt_utter[a.z[i]];
        ++cnt_su[{a.g, a.z[i]}];
        if (i + 1 < a.z.size()) {
            ++cnt_uu[{a.z[i], a.z[i + 1]}];
        }
    }
}

void CoOccurrenceStats::merge(const CoOccurrenceStats& other) {
    for (const auto& [k, v] : other.cnt_sess) {
        cnt_sess[k] += v;
    }
    for (const auto& [k, v] : other.cnt_utter) {
        cnt_utter[k] += v;
    }
    for (const auto& [k, v] : other.cnt_su) {
        cnt_su[k] += v;
    }
    for (const auto& [k, v] : other.cnt_uu) {
        cnt_uu[k] += v;
    }
}

CoOccurrenceStats accumulate(const std::vector<SessionAssignment>& assignments) {
    CoOccurrenceStats s;
    for (const auto& a : assignments) {
        s.add(a);
    }
    return s;
}

EdgeType parse_edge_type(const std::string& s) {
    if (s == "uu") {
        return EdgeType::uu;
    }
    if (s == "su") {
        return EdgeType::su;
    }
    if (s == "ss") {
        return EdgeType::ss;
    }
    throw std::invalid_argument("edge type must be uu, su or ss");
}

const char* edge_type_name(EdgeType t) {
    switch (t) {
    case EdgeType::uu:
        return "uu";
    case EdgeType::su:
        return "su";
    case EdgeType::ss:
        return "ss";
    }
    return "?";
}

std::vector<Edge> derive_ss_edges(const std::vector<Edge>& su, const std::map<int, size_t>& sess_count,
                                  const Thresholds& thresholds) {
    std::map<int, std::set<int>> kids;
    for (const auto& e : su) {
        kids[e.from].insert(e.to);
    }
    std::vector<Edge> out;
    for (const auto& [i, ki] : kids) {
        auto ci = sess_count.find(i);
        if (ci == sess_count.end() || ci->second == 0) {
            continue;
        }
        for (const auto& [o, ko] : kids) {
            if (o == i) {
                continue;
            }
            size_t shared = 0;
            for (int u : ki) {
                shared += ko.contains(u) ? 1 : 0;
            }
            if (shared == 0) {
                continue;
            }
            const double w = static_cast<double>(shared) / static_cast<double>(ci->second);
            if (thresholds.keep(w, thresholds.alpha_ss)) {
                out.push_back({i, o, w, shared});
            }
        }
    }
    return out;
}

StructureGraph build_graph(const CoOccurrenceStats& stats, const Thresholds& thresholds,
                           const std::vector<phrases::Phrase>& phrases, const std::string& checkpoint) {
    std::map<int, corpus::TokenList> utter;
    std::map<int, size_t> utter_count;
    std::map<int, size_t> sess_count;
    for (const auto& [n, c] : stats.cnt_utter) {
        if (c == 0) {
            continue;
        }
        if (n < 0 || static_cast<size_t>(n) >= phrases.size()) {
            throw std::out_of_range("utterance vertex " + std::to_string(n) + " has no phrase");
        }
        utter.emplace(n, phrases[static_cast<size_t>(n)].tokens);
        utter_count.emplace(n, c);
    }
    for (const auto& [m, c] : stats.cnt_sess) {
        if (c > 0) {
            sess_count.emplace(m, c);
        }
    }
    auto denom = [](const std::map<int, size_t>& counts, int id) -> size_t {
        auto it = counts.find(id);
        return it == counts.end() ? 0 : it->second;
    };
    std::vector<Edge> uu;
    for (const auto& [key, c] : stats.cnt_uu) {
        const size_t d = denom(utter_count, key.first);
        if (c == 0 || d == 0 || !utter_count.contains(key.second)) {
            continue;
        }
        const double w = static_cast<double>(c) / static_cast<double>(d);
        if (thresholds.keep(w, thresholds.alpha_uu)) {
            uu.push_back({key.first, key.second, w, c});
        }
    }
    std::vector<Edge> su;
    for (const auto& [key, c] : stats.cnt_su) {
        const size_t d = denom(utter_count, key.second);
        if (c == 0 || d == 0 || !sess_count.contains(key.first)) {
            continue;
        }
        const double w = static_cast<double>(c) / static_cast<double>(d);
        if (thresholds.keep(w, thresholds.alpha_su)) {
            su.push_back({key.first, key.second, w, c});
        }
    }
    std::vector<Edge> ss = derive_ss_edges(su, sess_count, thresholds);
    return StructureGraph(std::move(utter), std::move(utter_count), std::move(sess_count), std::move(uu),
                          std::move(su), std::move(ss), thresholds, checkpoint);
}

StructureGraph::StructureGraph(std::map<int, corpus::TokenList> utter, std::map<int, size_t> utter_count,
                               std::map<int, size_t> sess_count, std::vector<Edge> uu, std::vector<Edge> su,
                               std::vector<Edge> ss, Thresholds thresholds, std::string checkpoint)
    : utter_(std::move(utter)), utter_count_(std::move(utter_count)), sess_count_(std::move(sess_count)),
      uu_(std::move(uu)), su_(std::move(su)), ss_(std::move(ss)), thresholds_(thresholds),
      checkpoint_(std::move(checkpoint)) {
    auto key = [](const Edge& a, const Edge& b) { return std::tie(a.from, a.to) < std::tie(b.from, b.to); };
    std::sort(uu_.begin(), uu_.end(), key);
    std::sort(su_.begin(), su_.end(), key);
    std::sort(ss_.begin(), ss_.end(), key);
    index();
}

void StructureGraph::index() {
    for (const auto& e : uu_) {
        uu_out_[e.from].push_back({e.to, Level::utter, e.weight});
    }
    for (const auto& e : su_) {
        parents_[e.to].push_back({e.from, Level::sess, e.weight});
        children_[e.from].push_back({e.to, Level::utter, e.weight});
    }
    for (const auto& e : ss_) {
        ss_out_[e.from].push_back({e.to, Level::sess, e.weight});
    }
    for (auto* m : {&uu_out_, &parents_, &children_, &ss_out_}) {
        for (auto& [k, v] : *m) {
            std::sort(v.begin(), v.end(), by_weight);
        }
    }
}

const corpus::TokenList& StructureGraph::phrase(int n) const {
    auto it = utter_.find(n);
    if (it == utter_.end()) {
        throw UnknownVertex("unknown utterance-level vertex " + std::to_string(n));
    }
    return it->second;
}

double StructureGraph::goal_closeness(int m, int n) const {
    auto it = children_.find(m);
    if (it == children_.end()) {
        return 0.0;
    }
    for (const auto& nb : it->second) {
        if (nb.id == n) {
            return nb.weight;
        }
    }
    return 0.0;
}

std::vector<Neighbor> StructureGraph::neighbors(Level level, int id, EdgeType type) const {
    auto lookup = [](const std::map<int, std::vector<Neighbor>>& m, int key) {
        auto it = m.find(key);
        return it == m.end() ? std::vector<Neighbor>{} : it->second;
    };
    if (level == Level::utter) {
        if (!has_utter(id)) {
            throw UnknownVertex("unknown utterance-level vertex " + std::to_string(id));
        }
        if (type == EdgeType::ss) {
            throw std::invalid_argument("ss edges connect session-level vertices only");
        }
        return type == EdgeType::uu ? lookup(uu_out_, id) : lookup(parents_, id);
    }
    if (!has_sess(id)) {
        throw UnknownVertex("unknown session-level vertex " + std::to_string(id));
    }
    if (type == EdgeType::uu) {
        throw std::invalid_argument("uu edges connect utterance-level vertices only");
    }
    return type == EdgeType::su ? lookup(children_, id) : lookup(ss_out_, id);
}

namespace {
std::vector<int> ids_of(const std::vector<Neighbor>& v) {
    std::vector<int> out;
    out.reserve(v.size());
    for (const auto& n : v) {
        out.push_back(n.id);
    }
    return out;
}
} // namespace

std::vector<int> StructureGraph::parents(int n) const { return ids_of(neighbors(Level::utter, n, EdgeType::su)); }
std::vector<int> StructureGraph::children(int m) const { return ids_of(neighbors(Level::sess, m, EdgeType::su)); }
std::vector<int> StructureGraph::successors(int n) const { return ids_of(neighbors(Level::utter, n, EdgeType::uu)); }

std::vector<std::string> StructureGraph::goal_terms(int m, size_t k) const {
    std::map<std::string, double> score;
    for (const auto& nb : neighbors(Level::sess, m, EdgeType::su)) {
        std::set<std::string> seen;
        for (const auto& t : phrase(nb.id)) {
            if (seen.insert(t).second) {
                score[t] += nb.weight;
            }
        }
    }
    std::vector<std::pair<std::string, double>> ranked(score.begin(), score.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> out;
    for (size_t i = 0; i < ranked.size() && i < k; ++i) {
        out.push_back(ranked[i].first);
    }
    return out;
}

json StructureGraph::stats() const {
    return json{{"utter_vertices", utter_.size()},
                {"sess_vertices", sess_count_.size()},
                {"uu_edges", uu_.size()},
                {"su_edges", su_.size()},
                {"ss_edges", ss_.size()},
                {"edges", uu_.size() + su_.size() + ss_.size()},
                {"alpha_uu", thresholds_.alpha_uu},
                {"alpha_su", thresholds_.alpha_su},
                {"alpha_ss", thresholds_.alpha_ss},
                {"checkpoint", checkpoint_}};
}

namespace {
std::vector<json> graph_lines(const StructureGraph& g) {
    std::vector<json> lines;
    const auto& t = g.thresholds();
    lines.push_back(json{{"format", "atlas-graph"},
                         {"version", kGraphFormatVersion},
                         {"thresholds",
                          {{"alpha_uu", t.alpha_uu},
                           {"alpha_su", t.alpha_su},
                           {"alpha_ss", t.alpha_ss},
                           {"inclusive", t.inclusive}}},
                         {"checkpoint", g.checkpoint()}});
    for (const auto& [n, toks] : g.utter_vertices()) {
        lines.push_back(json{{"kind", "utter"}, {"id", n}, {"tokens", toks}, {"count", g.utter_counts().at(n)}});
    }
    for (const auto& [m, c] : g.sess_counts()) {
        lines.push_back(json{{"kind", "sess"}, {"id", m}, {"count", c}});
    }
    for (const auto& e : g.uu_edges()) {
        lines.push_back(edge_json("uu", e));
    }
    for (const auto& e : g.su_edges()) {
        lines.push_back(edge_json("su", e));
    }
    for (const auto& e : g.ss_edges()) {
        lines.push_back(edge_json("ss", e));
    }
    return lines;
}
} // namespace

std::string StructureGraph::digest() const {
    util::Sha256 h;
    for (const auto& l : graph_lines(*this)) {
        h.update(l.dump());
        h.update("\n");
    }
    return h.hex_digest();
}

std::string vertex_id(Level level, int id) { return (level == Level::utter ? "u" : "s") + std::to_string(id); }

std::pair<Level, int> parse_vertex_id(const std::string& text) {
    if (text.size() < 2 || (text[0] != 'u' && text[0] != 's')) {
        throw std::invalid_argument("vertex id must look like u12 or s3: " + text);
    }
    for (size_t i = 1; i < text.size(); ++i) {
        if (text[i] < '0' || text[i] > '9') {
            throw std::invalid_argument("vertex id must look like u12 or s3: " + text);
        }
    }
    if (text.size() > 10) {
        throw std::invalid_argument("vertex id out of range: " + text);
    }
    return {text[0] == 'u' ? Level::utter : Level::sess, std::stoi(text.substr(1))};
}

json vertex_json(const StructureGraph& g, const std::string& id) {
    const auto [level, n] = parse_vertex_id(id);
    if (level == Level::utter) {
        if (!g.has_utter(n)) {
            throw UnknownVertex("unknown vertex " + id);
        }
        return json{{"id", id},
                    {"level", "utter"},
                    {"phrase", corpus::detokenize(g.phrase(n))},
                    {"count", g.utter_counts().at(n)},
                    {"parents", g.parents(n).size()},
                    {"successors", g.successors(n).size()}};
    }
    if (!g.has_sess(n)) {
        throw UnknownVertex("unknown vertex " + id);
    }
    return json{{"id", id},
                {"level", "sess"},
                {"terms", g.goal_terms(n)},
                {"count", g.sess_counts().at(n)},
                {"children", g.children(n).size()},
                {"successors", g.neighbors(Level::sess, n, EdgeType::ss).size()}};
}

json neighbors_json(const StructureGraph& g, const std::string& id, const std::string& type, size_t limit) {
    const auto [level, n] = parse_vertex_id(id);
    const EdgeType t = type.empty() ? (level == Level::utter ? EdgeType::uu : EdgeType::su) : parse_edge_type(type);
    json out = json::array();
    for (const auto& nb : g.neighbors(level, n, t)) {
        if (out.size() >= limit) {
            break;
        }
        json rec{{"id", vertex_id(nb.level, nb.id)}, {"weight", nb.weight}};
        if (nb.level == Level::utter) {
            rec["phrase"] = corpus::detokenize(g.phrase(nb.id));
        } else {
            rec["terms"] = g.goal_terms(nb.id);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void save_graph(const StructureGraph& g, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    for (const auto& l : graph_lines(g)) {
        out << l.dump() << '\n';
    }
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

StructureGraph load_graph(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read graph " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("empty graph file " + path.string());
    }
    json header = json::parse(line);
    if (header.value("format", "") != "atlas-graph" || header.value("version", 0) != kGraphFormatVersion) {
        throw std::runtime_error("unsupported graph format in " + path.string());
    }
    Thresholds t;
    const auto& th = header.at("thresholds");
    t.alpha_uu = th.at("alpha_uu").get<double>();
    t.alpha_su = th.at("alpha_su").get<double>();
    t.alpha_ss = th.at("alpha_ss").get<double>();
    t.inclusive = th.value("inclusive", true);
    std::map<int, corpus::TokenList> utter;
    std::map<int, size_t> utter_count;
    std::map<int, size_t> sess_count;
    std::vector<Edge> uu;
    std::vector<Edge> su;
    std::vector<Edge> ss;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            json j = json::parse(line);
            const std::string kind = j.at("kind").get<std::string>();
            if (kind == "utter") {
                const int id = j.at("id").get<int>();
                utter.emplace(id, j.at("tokens").get<corpus::TokenList>());
                utter_count.emplace(id, j.at("count").get<size_t>());
            } else if (kind == "sess") {
                sess_count.emplace(j.at("id").get<int>(), j.at("count").get<size_t>());
            } else {
                Edge e{j.at("src").get<int>(), j.at("dst").get<int>(), j.at("weight").get<double>(),
                       j.at("count").get<size_t>()};
                (kind == "uu" ? uu : kind == "su" ? su : kind == "ss" ? ss : throw std::runtime_error("bad kind"))
                    .push_back(e);
            }
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return StructureGraph(std::move(utter), std::move(utter_count), std::move(sess_count), std::move(uu),
                          std::move(su), std::move(ss), t, header.value("checkpoint", ""));
}

} // namespace atlas::graph
