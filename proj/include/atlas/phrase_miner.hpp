#pragma once

#include "atlas/corpus.hpp"

#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace atlas::phrases {

using corpus::TokenList;

/// Dependency tree over the tokens of one utterance. Node i is token i;
/// head[i] == -1 marks the single HED attached to ROOT.
struct ParseTree {
    std::vector<int> head;
    std::vector<std::string> label;
    std::vector<bool> is_verb;
    /// Set when the built-in parser produced this tree because no adapter was
    /// configured or the adapter failed.
    bool fallback = false;

    int root() const;
    size_t size() const { return head.size(); }
};

/// Throws std::invalid_argument unless the tree has one root, is acyclic and
/// covers exactly `token_count` tokens.
void validate(const ParseTree& tree, size_t token_count);

class ParserAdapter {
public:
    virtual ~ParserAdapter() = default;
    virtual ParseTree parse(const corpus::Utterance& utterance) const = 0;
};

/// Flat tree: the first lexicon verb is HED and every other token hangs off it.
/// Without a verb, token 0 becomes a non-verb HED.
class FallbackParser : public ParserAdapter {
public:
    FallbackParser();
    explicit FallbackParser(std::set<std::string> verbs) : verbs_(std::move(verbs)) {}

    ParseTree parse(const corpus::Utterance& utterance) const override;
    bool is_verb(const std::string& token) const;
    void add_verbs(const std::filesystem::path& lexicon_file);

private:
    std::set<std::string> verbs_;
};

/// Trees computed offline by an external dependency parser, keyed by the
/// utterance's space-joined tokens. Lines: {"tokens": [...], "head": [...],
/// "label": [...], "pos": [...]} with 0-based heads and -1 for ROOT.
class PrecomputedParser : public ParserAdapter {
public:
    explicit PrecomputedParser(const std::filesystem::path& path);
    ParseTree parse(const corpus::Utterance& utterance) const override;

private:
    std::unordered_map<std::string, ParseTree> trees_;
};

/// Uses `adapter` when present and falls back to the built-in parser when it
/// is absent or throws; fallback trees are flagged.
ParseTree parse(const corpus::Utterance& utterance, const ParserAdapter* adapter,
                const FallbackParser& fallback = FallbackParser{});

/// HED-to-leaf paths as token sequences in sentence order, kept only when the
/// HED is a verb, deduplicated within the utterance.
std::vector<TokenList> extract_phrases(const corpus::Utterance& utterance, const ParseTree& tree);

struct Phrase {
    int id = 0;
    TokenList tokens;
    size_t frequency = 0;
};

struct PhraseEdge {
    int src = 0;
    int dst = 0;
    size_t count = 0;
    bool operator==(const PhraseEdge&) const = default;
};

struct PhraseGraph {
    size_t vertex_count = 0;
    std::vector<PhraseEdge> edges; // sorted by (src, dst)
};

/// Phrases extracted per session per utterance.
using CorpusExtraction = std::vector<std::vector<std::vector<TokenList>>>;

struct ExtractionStats {
    size_t utterances = 0;
    size_t fallback_trees = 0;
};

CorpusExtraction extract_corpus(const corpus::SessionStore& store, const ParserAdapter* adapter,
                                const FallbackParser& fallback = FallbackParser{}, ExtractionStats* stats = nullptr);

struct BindResult {
    std::vector<Phrase> phrases;
    /// True when fewer distinct phrases than requested were available.
    bool truncated = false;
};

/// Top-N phrases by frequency (utterances containing the phrase), ties broken
/// lexicographically; phrase ids follow that rank starting at 0.
BindResult rank_and_bind(const CorpusExtraction& extraction, size_t n);
BindResult rank_and_bind(const corpus::SessionStore& store, size_t n, const ParserAdapter* adapter = nullptr);

/// Directed edge a->b counts adjacent utterance pairs where bound phrase a is
/// extracted from the earlier utterance and b from the later one.
PhraseGraph build_phrase_graph(const CorpusExtraction& extraction, const std::vector<Phrase>& phrases,
                               size_t min_count);
PhraseGraph build_phrase_graph(const corpus::SessionStore& store, const std::vector<Phrase>& phrases,
                               size_t min_count, const ParserAdapter* adapter = nullptr);

void save_phrases(const std::vector<Phrase>& phrases, const std::filesystem::path& path);
std::vector<Phrase> load_phrases(const std::filesystem::path& path);
void save_phrase_graph(const PhraseGraph& graph, const std::filesystem::path& path);
PhraseGraph load_phrase_graph(const std::filesystem::path& path, size_t vertex_count);

std::string phrase_key(const TokenList& tokens);

} // namespace atlas::phrases
