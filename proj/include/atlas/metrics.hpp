#pragma once

#include "atlas/corpus.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <vector>

namespace atlas::dvae {
class DvaeModel;
}

namespace atlas::metrics {

using corpus::TokenList;

struct BleuConfig {
    /// Replace zero precisions of order >= 2 by epsilon instead of zeroing the score.
    bool smoothing = true;
    double epsilon = 1e-9;
};

/// Sentence BLEU-n: geometric mean of modified 1..n-gram precisions times the
/// brevity penalty. Empty hypothesis scores 0.
double bleu_n(const TokenList& reference, const TokenList& hypothesis, int n, const BleuConfig& config = {});

/// Corpus BLEU-n: clipped counts and lengths summed over all pairs first.
double corpus_bleu(const std::vector<TokenList>& references, const std::vector<TokenList>& hypotheses, int n,
                   const BleuConfig& config = {});

/// Modified n-gram precision without brevity penalty.
double ngram_precision(const TokenList& reference, const TokenList& hypothesis, int n);

/// Distinct n-grams over total n-grams across all utterances; 0 when none.
double distinct_n(const std::vector<TokenList>& utterances, int n);

/// |multiset intersection| / max(|a|, |b|); 0 when both are empty.
double token_overlap(const TokenList& a, const TokenList& b);

/// Turns before the dialog degenerates (1-based index of the first dull
/// utterance or of the second utterance of the first pair whose overlap
/// exceeds `overlap_threshold`); the full length when nothing triggers.
size_t hq_dialog_length(const std::vector<TokenList>& dialog, const std::vector<TokenList>& dull_list,
                        double overlap_threshold = 0.8);

/// Most frequent whole utterances occurring at least `min_count` times.
std::vector<TokenList> seed_dull_list(const corpus::SessionStore& store, size_t k = 10, size_t min_count = 2);

struct ReconstructionReport {
    double nll = 0.0;           // mean reconstruction NLL per utterance
    double nll_per_token = 0.0; // including EOS
    double bleu1 = 0.0;
    double bleu2 = 0.0;
    double dist1 = 0.0;
    double dist2 = 0.0;
    size_t sessions = 0;
    size_t utterances = 0;
};

/// Argmax recognition, teacher-forced NLL and greedy reconstruction BLEU.
ReconstructionReport reconstruction_eval(dvae::DvaeModel& model, const corpus::SessionStore& store,
                                         const BleuConfig& bleu = {});

struct EvalReport {
    ReconstructionReport reconstruction;
    std::optional<double> hq_length; // mean over simulated dialogs, when a policy was evaluated
    std::optional<double> agent_dist1;
    std::optional<double> agent_dist2;
    size_t dialogs = 0;
};

nlohmann::json to_json(const ReconstructionReport& r);
nlohmann::json to_json(const EvalReport& r);

} // namespace atlas::metrics
