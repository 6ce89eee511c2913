#pragma once

#include "atlas/gcs/agent.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace atlas::chat {

using corpus::TokenList;

class TurnCapReached : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ChatReply {
    size_t turn = 0; // 1-based
    gcs::TurnDecision decision;
    std::vector<std::string> goal_terms;

    /// {response, goal_id, goal_terms, vertex_id, vertex_phrase,
    /// reward_breakdown, turn, trace}
    nlohmann::json to_json() const;
};

/// One human conversation against read-only agent parts. Decisions are argmax,
/// so identical inputs give identical traces. Not thread-safe by itself.
class ChatSession {
public:
    explicit ChatSession(gcs::AgentParts parts, size_t max_turns = 8);

    /// Throws TurnCapReached, gcs::UnmappableContext or
    /// gcs::InvalidGoalOverride; on any throw the session is unchanged.
    ChatReply send(const std::string& text, std::optional<int> goal_override = std::nullopt);

    size_t turns() const { return state_.goal_history.size(); }
    size_t max_turns() const { return max_turns_; }
    bool finished() const { return turns() >= max_turns_; }
    /// Goal of the last agent turn.
    std::optional<int> current_goal() const;
    const std::vector<TokenList>& dialog() const { return dialog_; }
    const std::vector<ChatReply>& history() const { return history_; }

private:
    gcs::AgentParts parts_;
    size_t max_turns_;
    gcs::RlState state_;
    std::vector<TokenList> dialog_;
    std::vector<ChatReply> history_;
};

/// Terminal loop: one agent turn per input line, at most `max_turns`.
/// Commands: /goal prints the current goal, /pin ID pins the next goal,
/// /quit stops. Unmappable input gets an apology and is not counted. With
/// `echo` each input line is printed back (transcript replay). Returns the
/// number of agent turns taken.
size_t run_repl(const gcs::AgentParts& parts, std::istream& in, std::ostream& out, size_t max_turns = 8,
                bool echo = false);

struct ServiceConfig {
    size_t max_turns = 8;
    std::chrono::seconds idle_timeout{1800};
    std::string cors_origin = "*";
};

struct HttpResult {
    int status = 200;
    nlohmann::json body;
};

/// Route logic independent of the transport. Artifacts are shared read-only;
/// each session has its own lock, so one session's turns never interleave and
/// different sessions proceed independently.
class ChatService {
public:
    /// Without parts every session request answers 503.
    ChatService(std::optional<gcs::AgentParts> parts, ServiceConfig config = {});

    HttpResult create_session();
    /// body: {"text": ..., "goal_override": optional goal id (int or "s3")}
    HttpResult message(const std::string& session_id, const std::string& body);
    HttpResult vertex(const std::string& id) const;
    HttpResult neighbors(const std::string& id, const std::string& type, const std::string& limit) const;

    /// Drops sessions idle for longer than the configured timeout.
    size_t expire_idle(std::chrono::steady_clock::time_point now = std::chrono::steady_clock::now());
    size_t session_count() const;

    /// Registers every route plus CORS handling on `server`.
    void mount(httplib::Server& server);

private:
    struct Entry {
        std::mutex lock;
        ChatSession session;
        std::chrono::steady_clock::time_point created;
        std::chrono::steady_clock::time_point last_used;
        Entry(gcs::AgentParts parts, size_t max_turns);
    };

    std::shared_ptr<Entry> find(const std::string& id) const;
    std::string fresh_id();

    std::optional<gcs::AgentParts> parts_;
    ServiceConfig config_;
    mutable std::shared_mutex sessions_lock_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::mutex id_lock_;
    std::uint64_t id_counter_ = 0;
    std::uint64_t id_salt_ = 0;
};

} // namespace atlas::chat
