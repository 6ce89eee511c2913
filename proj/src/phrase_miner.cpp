#include "atlas/phrase_miner.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

namespace atlas::phrases {

using nlohmann::json;

namespace {

// Small built-in verb lexicon for the fallback parser. English base and
// common inflected forms plus frequent single-character Chinese verbs.
const char* const kDefaultVerbs[] = {
    "go", "goes", "went", "going", "come", "comes", "came", "coming", "visit", "visits", "visited", "visiting",
    "like", "likes", "liked", "love", "loves", "loved", "want", "wants", "wanted", "eat", "eats", "ate", "eating",
    "drink", "drinks", "drank", "see", "sees", "saw", "watch", "watches", "watched", "watching", "play", "plays",
    "played", "playing", "read", "reads", "reading", "buy", "buys", "bought", "cook", "cooks", "cooked", "cooking",
    "climb", "climbs", "climbed", "paint", "paints", "painted", "make", "makes", "made", "take", "takes", "took",
    "get", "gets", "got", "have", "has", "had", "need", "needs", "needed", "meet", "meets", "met", "wait", "waits",
    "waited", "call", "calls", "called", "miss", "misses", "missed", "know", "knows", "knew", "think", "thinks",
    "thought", "feel", "feels", "felt", "try", "tries", "tried", "find", "finds", "found", "give", "gives", "gave",
    "tell", "tells", "told", "ask", "asks", "asked", "work", "works", "worked", "study", "studies", "studied",
    "learn", "learns", "learned", "sleep", "sleeps", "slept", "run", "runs", "ran", "swim", "swims", "swam", "sing",
    "sings", "sang", "dance", "dances", "danced", "write", "writes", "wrote", "travel", "travels", "traveled",
    "arrive", "arrives", "arrived", "leave", "leaves", "left", "hope", "hopes", "hoped", "enjoy", "enjoys",
    "enjoyed", "hate", "hates", "hated", "listen", "listens", "listened", "hear", "hears", "heard", "help", "helps",
    "helped", "bring", "brings", "brought", "send", "sends", "sent", "pay", "pays", "paid", "open", "opens",
    "opened", "close", "closes", "closed", "start", "starts", "started", "finish", "finishes", "finished",
    "hike", "hikes", "hiked", "bake", "bakes", "baked", "fix", "fixes", "fixed", "clean", "cleans", "cleaned",
    "wash", "washes", "washed", "drive", "drives", "drove", "ride", "rides", "rode", "fly", "flies", "flew",
    "plant", "plants", "planted", "order", "orders", "ordered", "rent", "rents", "rented", "join", "joins", "joined",
    "去", "来", "吃", "喝", "看", "想", "玩", "买", "做", "走", "睡", "学", "爱", "要", "见", "等", "听", "说", "写", "唱",
    "跑", "喜欢", "旅游", "回家", "休息"};

bool lexicographic_less(const TokenList& a, const TokenList& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

} // namespace

int ParseTree::root() const {
    for (size_t i = 0; i < head.size(); ++i) {
        if (head[i] == -1) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

void validate(const ParseTree& tree, size_t token_count) {
    const size_t n = tree.head.size();
    if (n != token_count) {
        throw std::invalid_argument("parse covers " + std::to_string(n) + " nodes but utterance has " +
                                    std::to_string(token_count) + " tokens");
    }
    if (tree.is_verb.size() != n || (!tree.label.empty() && tree.label.size() != n)) {
        throw std::invalid_argument("parse annotation arrays disagree in length");
    }
    if (n == 0) {
        return;
    }
    size_t roots = 0;
    for (size_t i = 0; i < n; ++i) {
        int h = tree.head[i];
        if (h == -1) {
            ++roots;
        } else if (h < 0 || static_cast<size_t>(h) >= n || static_cast<size_t>(h) == i) {
            throw std::invalid_argument("invalid head index at node " + std::to_string(i));
        }
    }
    if (roots != 1) {
        throw std::invalid_argument("parse must have exactly one root, found " + std::to_string(roots));
    }
    for (size_t i = 0; i < n; ++i) {
        size_t steps = 0;
        for (int v = static_cast<int>(i); v != -1; v = tree.head[static_cast<size_t>(v)]) {
            if (++steps > n) {
                throw std::invalid_argument("parse contains a cycle through node " + std::to_string(i));
            }
        }
    }
}

FallbackParser::FallbackParser() {
    for (const char* v : kDefaultVerbs) {
        verbs_.insert(v);
    }
}

bool FallbackParser::is_verb(const std::string& token) const {
    if (verbs_.contains(token)) {
        return true;
    }
    std::string lower = token;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c); });
    return verbs_.contains(lower);
}

void FallbackParser::add_verbs(const std::filesystem::path& lexicon_file) {
    std::ifstream in(lexicon_file);
    if (!in) {
        throw std::runtime_error("cannot read verb lexicon " + lexicon_file.string());
    }
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] != '#') {
            verbs_.insert(line);
        }
    }
}

ParseTree FallbackParser::parse(const corpus::Utterance& utterance) const {
    const size_t n = utterance.tokens.size();
    ParseTree tree;
    tree.fallback = true;
    tree.is_verb.resize(n);
    for (size_t i = 0; i < n; ++i) {
        tree.is_verb[i] = is_verb(utterance.tokens[i]);
    }
    if (n == 0) {
        return tree;
    }
    size_t hed = 0;
    for (size_t i = 0; i < n; ++i) {
        if (tree.is_verb[i]) {
            hed = i;
            break;
        }
    }
    tree.head.assign(n, static_cast<int>(hed));
    tree.label.assign(n, "DEP");
    tree.head[hed] = -1;
    tree.label[hed] = "HED";
    return tree;
}

PrecomputedParser::PrecomputedParser(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read parses " + path.string());
    }
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            json j = json::parse(line);
            auto tokens = j.at("tokens").get<TokenList>();
            ParseTree t;
            t.head = j.at("head").get<std::vector<int>>();
            t.label = j.value("label", std::vector<std::string>(t.head.size(), "DEP"));
            auto pos = j.at("pos").get<std::vector<std::string>>();
            for (const auto& p : pos) {
                t.is_verb.push_back(!p.empty() && (p[0] == 'v' || p[0] == 'V'));
            }
            validate(t, tokens.size());
            trees_.emplace(phrase_key(tokens), std::move(t));
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

ParseTree PrecomputedParser::parse(const corpus::Utterance& utterance) const {
    auto it = trees_.find(phrase_key(utterance.tokens));
    if (it == trees_.end()) {
        throw std::runtime_error("no precomputed parse for: " + phrase_key(utterance.tokens));
    }
    return it->second;
}

ParseTree parse(const corpus::Utterance& utterance, const ParserAdapter* adapter, const FallbackParser& fallback) {
    if (adapter != nullptr) {
        try {
            ParseTree t = adapter->parse(utterance);
            validate(t, utterance.tokens.size());
            t.fallback = false;
            return t;
        } catch (const std::exception&) {
            // fall through to the built-in parser; the tree is flagged
        }
    }
    return fallback.parse(utterance);
}

std::vector<TokenList> extract_phrases(const corpus::Utterance& utterance, const ParseTree& tree) {
    validate(tree, utterance.tokens.size());
    std::vector<TokenList> out;
    const int hed = tree.root();
    if (hed < 0 || !tree.is_verb[static_cast<size_t>(hed)]) {
        return out;
    }
    const size_t n = tree.size();
    std::vector<bool> has_child(n, false);
    for (size_t i = 0; i < n; ++i) {
        if (tree.head[i] >= 0) {
            has_child[static_cast<size_t>(tree.head[i])] = true;
        }
    }
    std::set<std::string> seen;
    for (size_t leaf = 0; leaf < n; ++leaf) {
        if (has_child[leaf] || static_cast<int>(leaf) == hed) {
            continue;
        }
        std::vector<int> path;
        for (int v = static_cast<int>(leaf); v != -1; v = tree.head[static_cast<size_t>(v)]) {
            path.push_back(v);
        }
        std::sort(path.begin(), path.end());
        TokenList phrase;
        for (int v : path) {
            phrase.push_back(utterance.tokens[static_cast<size_t>(v)]);
        }
        if (seen.insert(phrase_key(phrase)).second) {
            out.push_back(std::move(phrase));
        }
    }
    return out;
}

CorpusExtraction extract_corpus(const corpus::SessionStore& store, const ParserAdapter* adapter,
                                const FallbackParser& fallback, ExtractionStats* stats) {
    CorpusExtraction out;
    out.reserve(store.size());
    ExtractionStats local;
    for (const auto& s : store.sessions()) {
        auto& per_session = out.emplace_back();
        for (const auto& u : s.utterances) {
            ParseTree t = parse(u, adapter, fallback);
            ++local.utterances;
            if (adapter != nullptr && t.fallback) {
                ++local.fallback_trees;
            }
            per_session.push_back(extract_phrases(u, t));
        }
    }
    if (stats != nullptr) {
        *stats = local;
    }
    return out;
}

BindResult rank_and_bind(const CorpusExtraction& extraction, size_t n) {
    if (n == 0) {
        throw std::invalid_argument("number of utterance-level vertices must be >= 1");
    }
    std::map<TokenList, size_t> freq;
    for (const auto& session : extraction) {
        for (const auto& utt : session) {
            for (const auto& p : utt) {
                ++freq[p];
            }
        }
    }
    if (freq.empty()) {
        throw std::runtime_error("no phrases could be extracted from the corpus");
    }
    std::vector<std::pair<TokenList, size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : lexicographic_less(a.first, b.first);
    });
    BindResult result;
    result.truncated = ranked.size() < n;
    const size_t keep = std::min(n, ranked.size());
    for (size_t i = 0; i < keep; ++i) {
        result.phrases.push_back({static_cast<int>(i), std::move(ranked[i].first), ranked[i].second});
    }
    return result;
}

BindResult rank_and_bind(const corpus::SessionStore& store, size_t n, const ParserAdapter* adapter) {
    return rank_and_bind(extract_corpus(store, adapter), n);
}

PhraseGraph build_phrase_graph(const CorpusExtraction& extraction, const std::vector<Phrase>& phrases,
                               size_t min_count) {
    std::unordered_map<std::string, int> index;
    for (const auto& p : phrases) {
        index.emplace(phrase_key(p.tokens), p.id);
    }
    auto bound = [&](const std::vector<TokenList>& extracted) {
        std::vector<int> ids;
        for (const auto& t : extracted) {
            auto it = index.find(phrase_key(t));
            if (it != index.end()) {
                ids.push_back(it->second);
            }
        }
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        return ids;
    };
    std::map<std::pair<int, int>, size_t> counts;
    for (const auto& session : extraction) {
        std::vector<std::vector<int>> ids;
        ids.reserve(session.size());
        for (const auto& utt : session) {
            ids.push_back(bound(utt));
        }
        for (size_t i = 0; i + 1 < ids.size(); ++i) {
            for (int a : ids[i]) {
                for (int b : ids[i + 1]) {
                    ++counts[{a, b}];
                }
            }
        }
    }
    PhraseGraph g;
    g.vertex_count = phrases.size();
    for (const auto& [key, c] : counts) {
        if (c >= min_count) {
            g.edges.push_back({key.first, key.second, c});
        }
    }
    return g;
}

PhraseGraph build_phrase_graph(const corpus::SessionStore& store, const std::vector<Phrase>& phrases,
                               size_t min_count, const ParserAdapter* adapter) {
    return build_phrase_graph(extract_corpus(store, adapter), phrases, min_count);
}

void save_phrases(const std::vector<Phrase>& phrases, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    for (const auto& p : phrases) {
        out << json{{"id", p.id}, {"tokens", p.tokens}, {"freq", p.frequency}}.dump() << '\n';
    }
}

std::vector<Phrase> load_phrases(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    std::vector<Phrase> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json j = json::parse(line);
        Phrase p{j.at("id").get<int>(), j.at("tokens").get<TokenList>(), j.at("freq").get<size_t>()};
        if (p.id != static_cast<int>(out.size())) {
            throw std::runtime_error(path.string() + ": phrase ids must be dense and ordered");
        }
        out.push_back(std::move(p));
    }
    return out;
}

void save_phrase_graph(const PhraseGraph& graph, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    for (const auto& e : graph.edges) {
        out << json{{"src", e.src}, {"dst", e.dst}, {"count", e.count}}.dump() << '\n';
    }
}

PhraseGraph load_phrase_graph(const std::filesystem::path& path, size_t vertex_count) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    PhraseGraph g;
    g.vertex_count = vertex_count;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json j = json::parse(line);
        PhraseEdge e{j.at("src").get<int>(), j.at("dst").get<int>(), j.at("count").get<size_t>()};
        if (e.src < 0 || e.dst < 0 || static_cast<size_t>(e.src) >= vertex_count ||
            static_cast<size_t>(e.dst) >= vertex_count) {
            throw std::runtime_error(path.string() + ": edge references unknown phrase");
        }
        g.edges.push_back(e);
    }
    std::sort(g.edges.begin(), g.edges.end(),
              [](const auto& a, const auto& b) { return std::pair(a.src, a.dst) < std::pair(b.src, b.dst); });
    return g;
}

std::string phrase_key(const TokenList& tokens) { return corpus::detokenize(tokens); }

} // namespace atlas::phrases
