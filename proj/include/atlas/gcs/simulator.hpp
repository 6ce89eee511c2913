#pragma once

#include "atlas/bm25.hpp"
#include "atlas/corpus.hpp"

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace atlas::gcs {

using corpus::TokenList;

struct SimulatorReply {
    TokenList text;
    bool terminate = false;
};

/// The user side of a simulated dialog: text in, text out, plus a stop signal.
class Simulator {
public:
    virtual ~Simulator() = default;
    /// Starts a new dialog and returns the opening user utterance.
    virtual TokenList open(std::uint64_t seed) = 0;
    /// Reply to the dialog so far (last element = agent's latest utterance).
    virtual SimulatorReply respond(const std::vector<TokenList>& dialog) = 0;
};

/// Plays lines in order and cycles. The first line opens the dialog; a line
/// reading "<end>" terminates it.
class ScriptedSimulator : public Simulator {
public:
    explicit ScriptedSimulator(std::vector<TokenList> lines);
    static ScriptedSimulator from_file(const std::filesystem::path& path);

    TokenList open(std::uint64_t seed) override;
    SimulatorReply respond(const std::vector<TokenList>& dialog) override;

    static constexpr const char* kEnd = "<end>";

private:
    TokenList next();

    std::vector<TokenList> lines_;
    size_t pos_ = 0;
};

/// Opens with the first utterance of a randomly drawn corpus session and
/// answers with the corpus successor of the utterance most similar (BM25) to
/// the agent's last turn. Falls back to a random session opener when nothing
/// matches. Never terminates on its own.
class RetrievalSimulator : public Simulator {
public:
    explicit RetrievalSimulator(const corpus::SessionStore& store);

    TokenList open(std::uint64_t seed) override;
    SimulatorReply respond(const std::vector<TokenList>& dialog) override;

private:
    std::vector<TokenList> openers_;
    std::vector<TokenList> queries_;    // utterances that have a successor
    std::vector<TokenList> successors_; // parallel to queries_
    retrieval::ShortlistIndex index_;
    std::mt19937_64 rng_;
};

/// "retrieval" or "scripted:FILE".
std::unique_ptr<Simulator> make_simulator(const std::string& spec, const corpus::SessionStore* store);

} // namespace atlas::gcs
