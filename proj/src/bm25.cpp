#include "atlas/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace atlas::retrieval {

ShortlistIndex::ShortlistIndex(const std::vector<phrases::Phrase>& phrases, Bm25Params params) : params_(params) {
    doc_len_.reserve(phrases.size());
    double total = 0.0;
    for (size_t d = 0; d < phrases.size(); ++d) {
        const auto& toks = phrases[d].tokens;
        doc_len_.push_back(toks.size());
        total += static_cast<double>(toks.size());
        std::map<std::string, int> tf;
        for (const auto& t : toks) {
            ++tf[t];
        }
        for (const auto& [term, n] : tf) {
            postings_[term].emplace_back(static_cast<int>(d), n);
        }
    }
    avg_len_ = phrases.empty() ? 0.0 : total / static_cast<double>(phrases.size());
}

double ShortlistIndex::idf(const std::string& term) const {
    auto it = postings_.find(term);
    const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
    const double n = static_cast<double>(doc_len_.size());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

namespace {
std::set<std::string> unique_terms(const corpus::TokenList& query) { return {query.begin(), query.end()}; }
} // namespace

double ShortlistIndex::score(const corpus::TokenList& query, int doc) const {
    double s = 0.0;
    const double len_norm = avg_len_ > 0.0 ? static_cast<double>(doc_len_[static_cast<size_t>(doc)]) / avg_len_ : 0.0;
    for (const auto& term : unique_terms(query)) {
        auto it = postings_.find(term);
        if (it == postings_.end()) {
            continue;
        }
        for (auto [d, tf] : it->second) {
            if (d == doc) {
                const double f = tf;
                s += idf(term) * f * (params_.k1 + 1.0) / (f + params_.k1 * (1.0 - params_.b + params_.b * len_norm));
                break;
            }
        }
    }
    return s;
}

std::vector<ScoredVertex> ShortlistIndex::ranked(const corpus::TokenList& query) const {
    std::unordered_map<int, double> acc;
    for (const auto& term : unique_terms(query)) {
        auto it = postings_.find(term);
        if (it == postings_.end()) {
            continue;
        }
        const double w = idf(term);
        for (auto [d, tf] : it->second) {
            const double f = tf;
            const double len_norm = static_cast<double>(doc_len_[static_cast<size_t>(d)]) / avg_len_;
            acc[d] += w * f * (params_.k1 + 1.0) / (f + params_.k1 * (1.0 - params_.b + params_.b * len_norm));
        }
    }
    std::vector<ScoredVertex> out;
    out.reserve(acc.size());
    for (auto [d, s] : acc) {
        if (s > 0.0) {
            out.push_back({d, s});
        }
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.score != b.score ? a.score > b.score : a.id < b.id; });
    return out;
}

std::vector<int> ShortlistIndex::shortlist(const corpus::TokenList& query, size_t k) const {
    std::vector<int> out;
    const size_t want = std::min(k, size());
    out.reserve(want);
    std::vector<bool> taken(size(), false);
    for (const auto& sv : ranked(query)) {
        if (out.size() == want) {
            break;
        }
        out.push_back(sv.id);
        taken[static_cast<size_t>(sv.id)] = true;
    }
    for (size_t d = 0; d < size() && out.size() < want; ++d) {
        if (!taken[d]) {
            out.push_back(static_cast<int>(d));
        }
    }
    return out;
}

} // namespace atlas::retrieval
