#pragma once

#include "atlas/corpus.hpp"
#include "atlas/phrase_miner.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace atlas::dvae {
class DvaeModel;
}

namespace atlas::graph {

/// Vertices recognized for one session: z per utterance plus the goal g.
struct SessionAssignment {
    std::vector<int> z;
    int g = 0;
    bool operator==(const SessionAssignment&) const = default;
};

/// Argmax recognition of every session. When `store_vocab` is given its digest
/// must equal the checkpoint vocabulary's.
std::vector<SessionAssignment> map_corpus(dvae::DvaeModel& model, const corpus::SessionStore& store,
                                          const corpus::Vocab* store_vocab = nullptr);

void save_assignments(const std::vector<SessionAssignment>& a, const std::filesystem::path& path);
std::vector<SessionAssignment> load_assignments(const std::filesystem::path& path);

struct CoOccurrenceStats {
    std::map<int, size_t> cnt_sess;
    std::map<int, size_t> cnt_utter;
    std::map<std::pair<int, int>, size_t> cnt_su; // (sess, utter)
    std::map<std::pair<int, int>, size_t> cnt_uu; // (earlier, later)

    void add(const SessionAssignment& a);
    void merge(const CoOccurrenceStats& other);
    bool operator==(const CoOccurrenceStats&) const = default;
};

CoOccurrenceStats accumulate(const std::vector<SessionAssignment>& assignments);

struct Thresholds {
    double alpha_uu = 0.05;
    double alpha_su = 0.05;
    double alpha_ss = 0.05;
    /// Keep an edge when its weight is >= alpha (otherwise strictly >).
    bool inclusive = true;

    bool keep(double weight, double alpha) const { return inclusive ? weight >= alpha : weight > alpha; }
};

struct Edge {
    int from = 0;
    int to = 0;
    double weight = 0.0;
    size_t count = 0;
    bool operator==(const Edge&) const = default;
};

enum class Level { utter, sess };
enum class EdgeType { uu, su, ss };

EdgeType parse_edge_type(const std::string& s);
const char* edge_type_name(EdgeType t);

struct Neighbor {
    int id = 0;
    Level level = Level::utter;
    double weight = 0.0;
    bool operator==(const Neighbor&) const = default;
};

class UnknownVertex : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Two vertex layers and three weighted edge sets. Read-only once built.
class StructureGraph {
public:
    StructureGraph() = default;
    StructureGraph(std::map<int, corpus::TokenList> utter, std::map<int, size_t> utter_count,
                   std::map<int, size_t> sess_count, std::vector<Edge> uu, std::vector<Edge> su, std::vector<Edge> ss,
                   Thresholds thresholds, std::string checkpoint);

    const std::map<int, corpus::TokenList>& utter_vertices() const { return utter_; }
    const std::map<int, size_t>& utter_counts() const { return utter_count_; }
    const std::map<int, size_t>& sess_counts() const { return sess_count_; }
    const std::vector<Edge>& uu_edges() const { return uu_; }
    const std::vector<Edge>& su_edges() const { return su_; } // from = sess, to = utter
    const std::vector<Edge>& ss_edges() const { return ss_; }
    const Thresholds& thresholds() const { return thresholds_; }
    const std::string& checkpoint() const { return checkpoint_; }

    bool has_utter(int n) const { return utter_.contains(n); }
    bool has_sess(int m) const { return sess_count_.contains(m); }
    const corpus::TokenList& phrase(int n) const;

    /// Sess-Utter weight, 0 when the edge is absent.
    double goal_closeness(int m, int n) const;

    /// Weighted neighbors, descending weight then ascending id. From an
    /// utterance vertex: uu = successors, su = parent goals. From a goal:
    /// su = children, ss = successor goals. Throws UnknownVertex.
    std::vector<Neighbor> neighbors(Level level, int id, EdgeType type) const;
    std::vector<int> parents(int n) const;
    std::vector<int> children(int m) const;
    std::vector<int> successors(int n) const;

    /// Most characteristic tokens of a goal: tokens of its child phrases
    /// weighted by Sess-Utter weight, top `k`.
    std::vector<std::string> goal_terms(int m, size_t k = 5) const;

    nlohmann::json stats() const;
    /// Canonical digest over vertices, edges and header.
    std::string digest() const;

private:
    void index();

    std::map<int, corpus::TokenList> utter_;
    std::map<int, size_t> utter_count_;
    std::map<int, size_t> sess_count_;
    std::vector<Edge> uu_;
    std::vector<Edge> su_;
    std::vector<Edge> ss_;
    Thresholds thresholds_;
    std::string checkpoint_;

    std::map<int, std::vector<Neighbor>> uu_out_;
    std::map<int, std::vector<Neighbor>> parents_;
    std::map<int, std::vector<Neighbor>> children_;
    std::map<int, std::vector<Neighbor>> ss_out_;
};

/// Thresholded edges from co-occurrence counts. `phrases` supplies the tokens
/// of utterance vertices (indexed by id).
StructureGraph build_graph(const CoOccurrenceStats& stats, const Thresholds& thresholds,
                           const std::vector<phrases::Phrase>& phrases, const std::string& checkpoint = {});

/// Sess-Sess edges recomputed from a Sess-Utter edge set alone.
std::vector<Edge> derive_ss_edges(const std::vector<Edge>& su, const std::map<int, size_t>& sess_count,
                                  const Thresholds& thresholds);

/// External vertex ids: "u12" (utterance level), "s3" (session level).
std::string vertex_id(Level level, int id);
/// Throws std::invalid_argument on a malformed id.
std::pair<Level, int> parse_vertex_id(const std::string& text);

/// Vertex record for inspection clients. Throws UnknownVertex.
nlohmann::json vertex_json(const StructureGraph& g, const std::string& id);
/// Weighted neighbors as [{id, weight, phrase|terms}], at most `limit`.
/// An empty `type` means uu from an utterance vertex and su from a goal.
nlohmann::json neighbors_json(const StructureGraph& g, const std::string& id, const std::string& type,
                              size_t limit);

void save_graph(const StructureGraph& g, const std::filesystem::path& path);
StructureGraph load_graph(const std::filesystem::path& path);

} // namespace atlas::graph
