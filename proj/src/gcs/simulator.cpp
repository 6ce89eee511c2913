#include "atlas/gcs/simulator.hpp"

#include <fstream>
#include <stdexcept>

namespace atlas::gcs {

ScriptedSimulator::ScriptedSimulator(std::vector<TokenList> lines) : lines_(std::move(lines)) {
    if (lines_.empty() || lines_.front() == TokenList{kEnd}) {
        throw std::invalid_argument("script needs an opening line");
    }
}

ScriptedSimulator ScriptedSimulator::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read script " + path.string());
    }
    std::vector<TokenList> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line == kEnd) {
            lines.push_back({kEnd});
            continue;
        }
        TokenList t = corpus::tokenize(line);
        if (!t.empty()) {
            lines.push_back(std::move(t));
        }
    }
    return ScriptedSimulator(std::move(lines));
}

TokenList ScriptedSimulator::next() {
    TokenList t = lines_[pos_];
    pos_ = (pos_ + 1) % lines_.size();
    return t;
}

TokenList ScriptedSimulator::open(std::uint64_t) {
    pos_ = 0;
    return next();
}

SimulatorReply ScriptedSimulator::respond(const std::vector<TokenList>&) {
    TokenList t = next();
    if (t == TokenList{kEnd}) {
        return {{}, true};
    }
    return {std::move(t), false};
}

namespace {

std::vector<phrases::Phrase> as_documents(const std::vector<TokenList>& texts) {
    std::vector<phrases::Phrase> docs;
    for (size_t i = 0; i < texts.size(); ++i) {
        docs.push_back({static_cast<int>(i), texts[i], 1});
    }
    return docs;
}

} // namespace

RetrievalSimulator::RetrievalSimulator(const corpus::SessionStore& store) {
    for (const auto& s : store.sessions()) {
        if (s.utterances.empty()) {
            continue;
        }
        openers_.push_back(s.utterances.front().tokens);
        for (size_t i = 0; i + 1 < s.utterances.size(); ++i) {
            queries_.push_back(s.utterances[i].tokens);
            successors_.push_back(s.utterances[i + 1].tokens);
        }
    }
    if (openers_.empty()) {
        throw std::invalid_argument("retrieval simulator needs a non-empty corpus");
    }
    index_ = retrieval::ShortlistIndex(as_documents(queries_));
}

TokenList RetrievalSimulator::open(std::uint64_t seed) {
    rng_.seed(seed);
    std::uniform_int_distribution<size_t> pick(0, openers_.size() - 1);
    return openers_[pick(rng_)];
}

SimulatorReply RetrievalSimulator::respond(const std::vector<TokenList>& dialog) {
    if (!dialog.empty()) {
        auto ranked = index_.ranked(dialog.back());
        if (!ranked.empty()) {
            return {successors_[static_cast<size_t>(ranked.front().id)], false};
        }
    }
    std::uniform_int_distribution<size_t> pick(0, openers_.size() - 1);
    return {openers_[pick(rng_)], false};
}

std::unique_ptr<Simulator> make_simulator(const std::string& spec, const corpus::SessionStore* store) {
    if (spec == "retrieval") {
        if (store == nullptr) {
            throw std::invalid_argument("retrieval simulator needs a session store");
        }
        return std::make_unique<RetrievalSimulator>(*store);
    }
    const std::string prefix = "scripted:";
    if (spec.rfind(prefix, 0) == 0 && spec.size() > prefix.size()) {
        return std::make_unique<ScriptedSimulator>(ScriptedSimulator::from_file(spec.substr(prefix.size())));
    }
    throw std::invalid_argument("simulator must be 'retrieval' or 'scripted:FILE', got '" + spec + "'");
}

} // namespace atlas::gcs
