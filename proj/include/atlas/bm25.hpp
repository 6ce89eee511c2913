#pragma once

#include "atlas/corpus.hpp"
#include "atlas/phrase_miner.hpp"

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace atlas::retrieval {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct ScoredVertex {
    int id = 0;
    double score = 0.0;
};

/// Okapi BM25 over the associated phrases of the utterance-level vertices.
/// Phrase i is document i; query terms are counted once.
class ShortlistIndex {
public:
    ShortlistIndex() = default;
    explicit ShortlistIndex(const std::vector<phrases::Phrase>& phrases, Bm25Params params = {});

    /// idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
    double idf(const std::string& term) const;
    double score(const corpus::TokenList& query, int doc) const;

    /// Every document with a positive score, descending, ties by lower id.
    std::vector<ScoredVertex> ranked(const corpus::TokenList& query) const;

    /// Top-k by score; when fewer than k documents score above zero the list
    /// is padded with the remaining ids in frequency-rank (id) order.
    std::vector<int> shortlist(const corpus::TokenList& query, size_t k = 50) const;

    size_t size() const { return doc_len_.size(); }
    const Bm25Params& params() const { return params_; }

private:
    Bm25Params params_;
    std::unordered_map<std::string, std::vector<std::pair<int, int>>> postings_; // term -> (doc, tf)
    std::vector<size_t> doc_len_;
    double avg_len_ = 0.0;
};

} // namespace atlas::retrieval
