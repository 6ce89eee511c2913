#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace atlas::corpus {

using TokenList = std::vector<std::string>;
using TokenIds = std::vector<int>;

struct Utterance {
    TokenList tokens;
    std::string raw_text;
};

struct DialogSession {
    std::string session_id;
    std::vector<Utterance> utterances;
};

enum class Format { jsonl, tsv };

Format parse_format(std::string_view name);

class CorpusError : public std::runtime_error {
public:
    CorpusError(const std::string& what, size_t line = 0) : std::runtime_error(what), line_(line) {}
    /// 1-based source line, 0 when not applicable.
    size_t line() const { return line_; }

private:
    size_t line_;
};

/// Splits CJK text; receives one maximal run of CJK code points (UTF-8).
using Segmenter = std::function<TokenList(std::string_view)>;

/// Whitespace/punctuation tokenizer. Runs of CJK characters are handed to the
/// segmenter hook; without one each character becomes a token.
class Tokenizer {
public:
    Tokenizer() = default;
    explicit Tokenizer(Segmenter segmenter) : segmenter_(std::move(segmenter)) {}

    TokenList operator()(std::string_view text) const;

private:
    Segmenter segmenter_;
};

TokenList tokenize(std::string_view text);
std::string detokenize(const TokenList& tokens);

/// Immutable, ordered collection of sessions (each with >= 2 utterances).
class SessionStore {
public:
    SessionStore() = default;
    SessionStore(std::vector<DialogSession> sessions, size_t dropped)
        : sessions_(std::move(sessions)), dropped_(dropped) {}

    const std::vector<DialogSession>& sessions() const { return sessions_; }
    size_t size() const { return sessions_.size(); }
    bool empty() const { return sessions_.empty(); }
    const DialogSession& operator[](size_t i) const { return sessions_[i]; }
    size_t dropped() const { return dropped_; }
    size_t utterance_count() const;

    /// Writes sessions.jsonl and manifest.json under `dir`.
    void save(const std::filesystem::path& dir) const;
    static SessionStore load(const std::filesystem::path& dir);
    /// Content digest over ids and tokens, independent of file layout.
    std::string digest() const;

private:
    std::vector<DialogSession> sessions_;
    size_t dropped_ = 0;
};

/// Parses one session per record; sessions shorter than two (non-empty)
/// utterances are dropped and counted.
SessionStore ingest_corpus(const std::filesystem::path& path, Format format, const Tokenizer& tokenizer = {});
SessionStore ingest_stream(std::istream& in, Format format, const Tokenizer& tokenizer = {});

class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kSep = 4;
    static constexpr int kNumSpecials = 5;

    Vocab();
    /// Most frequent tokens first, ties broken lexicographically.
    static Vocab build(const SessionStore& store, size_t max_size);
    static Vocab from_tokens(const std::vector<std::string>& ordered_regular_tokens);

    int id(const std::string& token) const;
    const std::string& token(int id) const;
    bool contains(const std::string& token) const { return index_.contains(token); }
    size_t size() const { return tokens_.size(); }
    TokenIds encode(const TokenList& tokens) const;
    TokenList decode(const TokenIds& ids, bool strip_specials = true) const;

    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);
    std::string digest() const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

Vocab build_vocab(const SessionStore& store, size_t max_size);

} // namespace atlas::corpus
