#include "atlas/corpus.hpp"

#include "atlas/util/hash.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace atlas::corpus {

using nlohmann::json;

Format parse_format(std::string_view name) {
    if (name == "jsonl") {
        return Format::jsonl;
    }
    if (name == "tsv") {
        return Format::tsv;
    }
    throw CorpusError("unknown corpus format '" + std::string(name) + "'");
}

namespace {

// Decodes one UTF-8 code point starting at text[i]; invalid bytes decode as
// themselves with length 1.
std::pair<char32_t, size_t> decode_utf8(std::string_view text, size_t i) {
    auto b0 = static_cast<unsigned char>(text[i]);
    auto cont = [&](size_t k) -> int {
        if (i + k >= text.size()) {
            return -1;
        }
        auto b = static_cast<unsigned char>(text[i + k]);
        return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
    };
    if (b0 < 0x80) {
        return {b0, 1};
    }
    if ((b0 & 0xE0) == 0xC0) {
        int c1 = cont(1);
        if (c1 >= 0) {
            return {static_cast<char32_t>(((b0 & 0x1F) << 6) | c1), 2};
        }
    } else if ((b0 & 0xF0) == 0xE0) {
        int c1 = cont(1);
        int c2 = cont(2);
        if (c1 >= 0 && c2 >= 0) {
            return {static_cast<char32_t>(((b0 & 0x0F) << 12) | (c1 << 6) | c2), 3};
        }
    } else if ((b0 & 0xF8) == 0xF0) {
        int c1 = cont(1);
        int c2 = cont(2);
        int c3 = cont(3);
        if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
            return {static_cast<char32_t>(((b0 & 0x07) << 18) | (c1 << 12) | (c2 << 6) | c3), 4};
        }
    }
    return {b0, 1};
}

bool is_cjk_punct(char32_t c) {
    return (c >= 0x3000 && c <= 0x303F) || (c >= 0xFF01 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20) ||
           (c >= 0xFF3B && c <= 0xFF40) || (c >= 0xFF5B && c <= 0xFF65);
}

bool is_cjk(char32_t c) {
    return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x20000 && c <= 0x2A6DF) ||
           (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x3040 && c <= 0x30FF) || (c >= 0xAC00 && c <= 0xD7AF);
}

bool is_space(char32_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ascii_alnum(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

bool is_ascii_punct(char32_t c) {
    return c < 0x80 && ((c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
                        (c >= 0x7B && c <= 0x7E));
}

} // namespace

TokenList Tokenizer::operator()(std::string_view text) const {
    TokenList out;
    std::string word;
    std::string cjk_run;
    auto flush_word = [&] {
        if (!word.empty()) {
            out.push_back(std::move(word));
            word.clear();
        }
    };
    auto flush_cjk = [&] {
        if (cjk_run.empty()) {
            return;
        }
        if (segmenter_) {
            for (auto& t : segmenter_(cjk_run)) {
                if (!t.empty()) {
                    out.push_back(std::move(t));
                }
            }
        } else {
            for (size_t i = 0; i < cjk_run.size();) {
                auto [_, len] = decode_utf8(cjk_run, i);
                out.emplace_back(cjk_run.substr(i, len));
                i += len;
            }
        }
        cjk_run.clear();
    };

    for (size_t i = 0; i < text.size();) {
        auto [cp, len] = decode_utf8(text, i);
        std::string_view bytes = text.substr(i, len);
        if (is_cjk(cp)) {
            flush_word();
            cjk_run.append(bytes);
        } else if (is_space(cp)) {
            flush_word();
            flush_cjk();
        } else if (is_cjk_punct(cp)) {
            flush_word();
            flush_cjk();
            out.emplace_back(bytes);
        } else if (is_ascii_punct(cp)) {
            flush_cjk();
            // Keep intra-word apostrophes and hyphens: don't, well-known.
            bool inner = (cp == '\'' || cp == '-') && !word.empty() && i + 1 < text.size() &&
                         is_ascii_alnum(text[i + 1]);
            if (inner) {
                word.append(bytes);
            } else {
                flush_word();
                out.emplace_back(bytes);
            }
        } else {
            flush_cjk();
            word.append(bytes);
        }
        i += len;
    }
    flush_word();
    flush_cjk();
    return out;
}

TokenList tokenize(std::string_view text) { return Tokenizer{}(text); }

std::string detokenize(const TokenList& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) {
            out.push_back(' ');
        }
        out += tokens[i];
    }
    return out;
}

size_t SessionStore::utterance_count() const {
    size_t n = 0;
    for (const auto& s : sessions_) {
        n += s.utterances.size();
    }
    return n;
}

namespace {

json session_to_json(const DialogSession& s) {
    json utts = json::array();
    for (const auto& u : s.utterances) {
        utts.push_back({{"text", u.raw_text}, {"tokens", u.tokens}});
    }
    return {{"id", s.session_id}, {"utterances", std::move(utts)}};
}

DialogSession session_from_store_json(const json& j) {
    DialogSession s;
    s.session_id = j.at("id").get<std::string>();
    for (const auto& u : j.at("utterances")) {
        s.utterances.push_back({u.at("tokens").get<TokenList>(), u.at("text").get<std::string>()});
    }
    return s;
}

// Builds a session from raw texts; returns nullopt when fewer than two
// utterances survive tokenization.
std::optional<DialogSession> make_session(std::string id, const std::vector<std::string>& texts,
                                          const Tokenizer& tokenizer) {
    DialogSession s;
    s.session_id = std::move(id);
    for (const auto& t : texts) {
        TokenList toks = tokenizer(t);
        if (!toks.empty()) {
            s.utterances.push_back({std::move(toks), t});
        }
    }
    if (s.utterances.size() < 2) {
        return std::nullopt;
    }
    return s;
}

} // namespace

void SessionStore::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "sessions.jsonl", std::ios::trunc);
        if (!out) {
            throw CorpusError("cannot write " + (dir / "sessions.jsonl").string());
        }
        for (const auto& s : sessions_) {
            out << session_to_json(s).dump() << '\n';
        }
    }
    json manifest = {{"format", "atlas-store"},
                     {"version", 1},
                     {"sessions", sessions_.size()},
                     {"utterances", utterance_count()},
                     {"dropped", dropped_},
                     {"digest", digest()}};
    std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << '\n';
}

SessionStore SessionStore::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "sessions.jsonl");
    if (!in) {
        throw CorpusError("no session store at " + dir.string());
    }
    std::vector<DialogSession> sessions;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            sessions.push_back(session_from_store_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw CorpusError("malformed store record at line " + std::to_string(lineno) + ": " + e.what(), lineno);
        }
    }
    size_t dropped = 0;
    std::ifstream mf(dir / "manifest.json");
    if (mf) {
        json manifest = json::parse(mf);
        dropped = manifest.value("dropped", size_t{0});
    }
    return SessionStore(std::move(sessions), dropped);
}

std::string SessionStore::digest() const {
    util::Sha256 h;
    for (const auto& s : sessions_) {
        h.update(s.session_id);
        h.update("\x1e", 1);
        for (const auto& u : s.utterances) {
            for (const auto& t : u.tokens) {
                h.update(t);
                h.update("\x1f", 1);
            }
            h.update("\x1d", 1);
        }
    }
    return h.hex_digest();
}

SessionStore ingest_stream(std::istream& in, Format format, const Tokenizer& tokenizer) {
    std::vector<DialogSession> sessions;
    size_t dropped = 0;
    size_t records = 0;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        ++records;
        std::string id;
        std::vector<std::string> texts;
        if (format == Format::jsonl) {
            try {
                json j = json::parse(line);
                if (!j.is_object() || !j.contains("utterances") || !j["utterances"].is_array()) {
                    throw CorpusError("line " + std::to_string(lineno) + ": expected {\"id\", \"utterances\": [...]}",
                                      lineno);
                }
                id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                                      : std::to_string(lineno);
                for (const auto& u : j["utterances"]) {
                    if (!u.is_string()) {
                        throw CorpusError("line " + std::to_string(lineno) + ": utterances must be strings", lineno);
                    }
                    texts.push_back(u.get<std::string>());
                }
            } catch (const json::exception& e) {
                throw CorpusError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what(), lineno);
            }
        } else {
            std::stringstream ss(line);
            std::string field;
            bool first = true;
            while (std::getline(ss, field, '\t')) {
                if (first) {
                    id = field;
                    first = false;
                } else {
                    texts.push_back(field);
                }
            }
            if (id.empty()) {
                throw CorpusError("line " + std::to_string(lineno) + ": missing session id", lineno);
            }
        }
        if (auto s = make_session(std::move(id), texts, tokenizer)) {
            sessions.push_back(std::move(*s));
        } else {
            ++dropped;
        }
    }
    if (records == 0) {
        throw CorpusError("empty corpus");
    }
    return SessionStore(std::move(sessions), dropped);
}

SessionStore ingest_corpus(const std::filesystem::path& path, Format format, const Tokenizer& tokenizer) {
    std::ifstream in(path);
    if (!in) {
        throw CorpusError("cannot open corpus " + path.string());
    }
    return ingest_stream(in, format, tokenizer);
}

Vocab::Vocab() {
    tokens_ = {"<pad>", "<unk>", "<bos>", "<eos>", "<sep>"};
    for (int i = 0; i < kNumSpecials; ++i) {
        index_.emplace(tokens_[static_cast<size_t>(i)], i);
    }
}

Vocab Vocab::from_tokens(const std::vector<std::string>& ordered_regular_tokens) {
    Vocab v;
    for (const auto& t : ordered_regular_tokens) {
        if (v.index_.contains(t)) {
            throw CorpusError("duplicate vocabulary entry '" + t + "'");
        }
        v.index_.emplace(t, static_cast<int>(v.tokens_.size()));
        v.tokens_.push_back(t);
    }
    return v;
}

Vocab Vocab::build(const SessionStore& store, size_t max_size) {
    if (max_size < kNumSpecials) {
        throw CorpusError("max vocabulary size " + std::to_string(max_size) + " is smaller than the " +
                          std::to_string(kNumSpecials) + " special tokens");
    }
    if (store.empty()) {
        throw CorpusError("cannot build a vocabulary from an empty store");
    }
    std::unordered_map<std::string, size_t> freq;
    for (const auto& s : store.sessions()) {
        for (const auto& u : s.utterances) {
            for (const auto& t : u.tokens) {
                ++freq[t];
            }
        }
    }
    Vocab probe;
    std::vector<std::pair<std::string, size_t>> ranked;
    for (auto& [tok, n] : freq) {
        if (!probe.contains(tok)) {
            ranked.emplace_back(tok, n);
        }
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    size_t keep = std::min(ranked.size(), max_size - kNumSpecials);
    std::vector<std::string> regular;
    regular.reserve(keep);
    for (size_t i = 0; i < keep; ++i) {
        regular.push_back(ranked[i].first);
    }
    return from_tokens(regular);
}

int Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= tokens_.size()) {
        throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    }
    return tokens_[static_cast<size_t>(id)];
}

TokenIds Vocab::encode(const TokenList& tokens) const {
    TokenIds ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) {
        ids.push_back(id(t));
    }
    return ids;
}

TokenList Vocab::decode(const TokenIds& ids, bool strip_specials) const {
    TokenList out;
    for (int i : ids) {
        if (strip_specials && i < kNumSpecials && i != kUnk) {
            continue;
        }
        out.push_back(token(i));
    }
    return out;
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw CorpusError("cannot write " + path.string());
    }
    for (size_t i = kNumSpecials; i < tokens_.size(); ++i) {
        out << tokens_[i] << '\n';
    }
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw CorpusError("cannot read vocabulary " + path.string());
    }
    std::vector<std::string> regular;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            regular.push_back(line);
        }
    }
    return from_tokens(regular);
}

std::string Vocab::digest() const {
    util::Sha256 h;
    for (const auto& t : tokens_) {
        h.update(t);
        h.update("\n", 1);
    }
    return h.hex_digest();
}

Vocab build_vocab(const SessionStore& store, size_t max_size) { return Vocab::build(store, max_size); }

} // namespace atlas::corpus
