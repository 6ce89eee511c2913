#include "atlas/chat_service.hpp"

#include "atlas/util/hash.hpp"

#include <httplib.h>

#include <iostream>
#include <random>

namespace atlas::chat {

using nlohmann::json;

json ChatReply::to_json() const {
    return json{{"response", corpus::detokenize(decision.response)},
                {"goal_id", graph::vertex_id(graph::Level::sess, decision.goal)},
                {"goal_terms", goal_terms},
                {"vertex_id", graph::vertex_id(graph::Level::utter, decision.vertex)},
                {"vertex_phrase", corpus::detokenize(decision.phrase)},
                {"reward_breakdown", decision.reward.to_json()},
                {"turn", turn},
                {"trace", decision.to_json()}};
}

ChatSession::ChatSession(gcs::AgentParts parts, size_t max_turns) : parts_(parts), max_turns_(max_turns) {
    if (max_turns_ == 0) {
        throw std::invalid_argument("max_turns must be positive");
    }
}

std::optional<int> ChatSession::current_goal() const {
    if (state_.goal_history.empty()) {
        return std::nullopt;
    }
    return state_.goal_history.back();
}

ChatReply ChatSession::send(const std::string& text, std::optional<int> goal_override) {
    if (finished()) {
        throw TurnCapReached("turn cap of " + std::to_string(max_turns_) + " reached");
    }
    TokenList user = corpus::tokenize(text);
    std::vector<TokenList> dialog = dialog_;
    dialog.push_back(user);
    gcs::RlState next = state_;
    next.context = gcs::last_two(dialog);
    next.turn_index = turns();
    nn::Tape tape;
    gcs::TurnOptions opts;
    opts.goal_override = goal_override;
    gcs::TurnTrace tr = gcs::take_turn(tape, parts_, next, opts);

    ChatReply r;
    r.turn = turns() + 1;
    r.decision = std::move(tr.decision);
    r.goal_terms = parts_.graph->has_sess(r.decision.goal) ? parts_.graph->goal_terms(r.decision.goal)
                                                           : std::vector<std::string>{};
    dialog.push_back(r.decision.response);
    next.goal_history.push_back(r.decision.goal);
    next.utter_history.push_back(r.decision.vertex);
    dialog_ = std::move(dialog);
    state_ = std::move(next);
    history_.push_back(r);
    return r;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& t : v) {
        out += (out.empty() ? "" : " ") + t;
    }
    return out;
}

} // namespace

size_t run_repl(const gcs::AgentParts& parts, std::istream& in, std::ostream& out, size_t max_turns, bool echo) {
    ChatSession session(parts, max_turns);
    std::optional<int> pin;
    out << "atlas chat, up to " << max_turns << " turns. Commands: /goal, /pin s<id>, /quit\n";
    std::string line;
    while (!session.finished() && std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        if (echo) {
            out << "you: " << line << '\n';
        }
        if (line == "/quit") {
            break;
        }
        if (line == "/goal") {
            if (auto g = session.current_goal()) {
                out << "current goal " << graph::vertex_id(graph::Level::sess, *g) << " ("
                    << join(parts.graph->goal_terms(*g)) << ")\n";
            } else {
                out << "no goal yet\n";
            }
            continue;
        }
        if (line.rfind("/pin", 0) == 0) {
            try {
                auto [level, id] = graph::parse_vertex_id(trim(line.substr(4)));
                if (level != graph::Level::sess) {
                    throw std::invalid_argument("pin a session-level id such as s3");
                }
                pin = id;
                out << "next goal pinned to " << graph::vertex_id(level, id) << '\n';
            } catch (const std::exception& e) {
                out << "cannot pin: " << e.what() << '\n';
            }
            continue;
        }
        try {
            ChatReply r = session.send(line, pin);
            pin.reset();
            out << "[turn " << r.turn << "] goal " << graph::vertex_id(graph::Level::sess, r.decision.goal) << " ("
                << join(r.goal_terms) << ") vertex " << graph::vertex_id(graph::Level::utter, r.decision.vertex)
                << ": " << corpus::detokenize(r.decision.phrase) << '\n';
            out << "agent: " << corpus::detokenize(r.decision.response) << '\n';
        } catch (const gcs::UnmappableContext&) {
            out << "sorry, I cannot relate that to anything I know. Could you rephrase?\n";
        } catch (const gcs::InvalidGoalOverride& e) {
            pin.reset();
            out << "pin rejected: " << e.what() << '\n';
        }
    }
    std::vector<std::string> goals;
    for (const auto& r : session.history()) {
        goals.push_back(graph::vertex_id(graph::Level::sess, r.decision.goal));
    }
    out << "session ended after " << session.turns() << " turns; goals: " << join(goals) << '\n';
    return session.turns();
}

ChatService::Entry::Entry(gcs::AgentParts parts, size_t max_turns)
    : session(parts, max_turns), created(std::chrono::steady_clock::now()), last_used(created) {}

ChatService::ChatService(std::optional<gcs::AgentParts> parts, ServiceConfig config)
    : parts_(parts), config_(std::move(config)) {
    std::random_device rd;
    id_salt_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

std::string ChatService::fresh_id() {
    std::lock_guard<std::mutex> g(id_lock_);
    const std::uint64_t n = ++id_counter_;
    return util::sha256_hex(std::to_string(id_salt_) + ":" + std::to_string(n)).substr(0, 32);
}

namespace {

HttpResult error(int status, const std::string& message) { return {status, json{{"error", message}}}; }

std::optional<int> parse_goal(const json& v) {
    if (v.is_null()) {
        return std::nullopt;
    }
    if (v.is_number_integer()) {
        return v.get<int>();
    }
    if (v.is_string()) {
        auto [level, id] = graph::parse_vertex_id(v.get<std::string>());
        if (level != graph::Level::sess) {
            throw std::invalid_argument("goal_override must be a session-level id");
        }
        return id;
    }
    throw std::invalid_argument("goal_override must be an integer or an id like s3");
}

} // namespace

HttpResult ChatService::create_session() {
    if (!parts_) {
        return error(503, "artifacts not loaded");
    }
    const std::string id = fresh_id();
    auto entry = std::make_shared<Entry>(*parts_, config_.max_turns);
    std::unique_lock<std::shared_mutex> g(sessions_lock_);
    sessions_.emplace(id, std::move(entry));
    return {200, json{{"session_id", id}, {"max_turns", config_.max_turns}}};
}

std::shared_ptr<ChatService::Entry> ChatService::find(const std::string& id) const {
    std::shared_lock<std::shared_mutex> g(sessions_lock_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

HttpResult ChatService::message(const std::string& session_id, const std::string& body) {
    if (!parts_) {
        return error(503, "artifacts not loaded");
    }
    auto entry = find(session_id);
    if (!entry) {
        return error(404, "unknown session " + session_id);
    }
    std::string text;
    std::optional<int> goal;
    try {
        json req = json::parse(body);
        if (!req.is_object() || !req.contains("text") || !req.at("text").is_string()) {
            return error(400, "body must be an object with a string field text");
        }
        text = req.at("text").get<std::string>();
        if (req.contains("goal_override")) {
            goal = parse_goal(req.at("goal_override"));
        }
    } catch (const std::exception& e) {
        return error(400, std::string("bad request: ") + e.what());
    }
    std::lock_guard<std::mutex> g(entry->lock);
    entry->last_used = std::chrono::steady_clock::now();
    try {
        return {200, entry->session.send(text, goal).to_json()};
    } catch (const TurnCapReached& e) {
        return error(409, e.what());
    } catch (const gcs::UnmappableContext& e) {
        return error(422, e.what());
    } catch (const gcs::InvalidGoalOverride& e) {
        return error(400, e.what());
    } catch (const std::exception& e) {
        return error(500, e.what());
    }
}

HttpResult ChatService::vertex(const std::string& id) const {
    if (!parts_) {
        return error(503, "artifacts not loaded");
    }
    try {
        return {200, graph::vertex_json(*parts_->graph, id)};
    } catch (const graph::UnknownVertex& e) {
        return error(404, e.what());
    } catch (const std::invalid_argument& e) {
        return error(404, e.what());
    }
}

HttpResult ChatService::neighbors(const std::string& id, const std::string& type, const std::string& limit) const {
    if (!parts_) {
        return error(503, "artifacts not loaded");
    }
    size_t k = 20;
    if (!limit.empty()) {
        try {
            size_t used = 0;
            const long long v = std::stoll(limit, &used);
            if (used != limit.size() || v < 0) {
                throw std::invalid_argument(limit);
            }
            k = static_cast<size_t>(v);
        } catch (const std::exception&) {
            return error(400, "limit must be a non-negative integer");
        }
    }
    try {
        graph::parse_vertex_id(id);
    } catch (const std::invalid_argument& e) {
        return error(404, e.what());
    }
    try {
        return {200, graph::neighbors_json(*parts_->graph, id, type, k)};
    } catch (const graph::UnknownVertex& e) {
        return error(404, e.what());
    } catch (const std::invalid_argument& e) {
        return error(400, e.what());
    }
}

size_t ChatService::expire_idle(std::chrono::steady_clock::time_point now) {
    std::unique_lock<std::shared_mutex> g(sessions_lock_);
    size_t dropped = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        std::unique_lock<std::mutex> busy(it->second->lock, std::try_to_lock);
        if (busy.owns_lock() && now - it->second->last_used > config_.idle_timeout) {
            busy.unlock();
            it = sessions_.erase(it);
            ++dropped;
        } else {
            ++it;
        }
    }
    return dropped;
}

size_t ChatService::session_count() const {
    std::shared_lock<std::shared_mutex> g(sessions_lock_);
    return sessions_.size();
}

void ChatService::mount(httplib::Server& server) {
    const std::string origin = config_.cors_origin;
    server.set_default_headers({{"Access-Control-Allow-Origin", origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    auto reply = [](httplib::Response& res, const HttpResult& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.Post("/api/session", [this, reply](const httplib::Request&, httplib::Response& res) {
        expire_idle();
        reply(res, create_session());
    });
    server.Post(R"(/api/session/([^/]+)/message)", [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, message(req.matches[1], req.body));
    });
    server.Get(R"(/api/graph/vertex/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, vertex(req.matches[1]));
    });
    server.Get(R"(/api/graph/neighbors/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, neighbors(req.matches[1], req.get_param_value("type"), req.get_param_value("limit")));
    });
}

} // namespace atlas::chat
