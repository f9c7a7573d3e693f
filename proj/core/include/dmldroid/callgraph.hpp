#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmldroid/common.hpp"
#include "dmldroid/tabular.hpp"

namespace dmldroid::callgraph {

// Directed API call graph. Node ids are dense and stable; duplicate edges and
// self-loops are dropped at insertion (no downstream formula wants either).
class CallGraph {
public:
    std::size_t add_node(const std::string& name);
    std::size_t id_of(const std::string& name) const;  // npos when absent
    bool has_node(const std::string& name) const;
    bool add_edge(const std::string& u, const std::string& v);
    bool add_edge(std::size_t u, std::size_t v);
    bool has_edge(std::size_t u, std::size_t v) const;

    std::size_t node_count() const { return names_.size(); }
    std::size_t edge_count() const { return edge_count_; }
    const std::string& name(std::size_t id) const;
    const std::vector<std::size_t>& out(std::size_t id) const;
    const std::vector<std::size_t>& in(std::size_t id) const;
    std::vector<std::pair<std::size_t, std::size_t>> edges() const;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    std::vector<std::string> names_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::vector<std::size_t>> out_;
    std::vector<std::vector<std::size_t>> in_;
    std::size_t edge_count_ = 0;
};

// One `caller_api<TAB>callee_api` per line. Node ids are assigned in sorted
// name order so the parse is invariant to line permutation.
CallGraph parse_edge_list(const std::string& text);
std::string to_edge_list(const CallGraph& g);
CallGraph load_edge_list(const std::string& path);
void save_edge_list(const std::string& path, const CallGraph& g);

struct KeyApiSet {
    std::vector<std::string> apis;   // importance-ordered, scores non-increasing
    std::vector<double> scores;

    std::size_t size() const { return apis.size(); }
    bool contains(const std::string& api) const;
    double score_of(const std::string& api) const;  // 0 when absent
};

// Two-stage selection: document-frequency filter per class, then
// mean-decrease-in-impurity ranking from a seeded forest of shallow trees.
// Zero-importance APIs never make the set; if fewer than k survive, all
// survivors are returned and a warning is printed.
KeyApiSet select_key_apis(const tabular::BinaryFeatureMatrix& api_presence,
                          const std::vector<int>& labels, std::size_t k = 30,
                          double df_min = 0.05, std::uint64_t seed = 0);

void save_key_api_csv(const std::string& path, const KeyApiSet& keys);
KeyApiSet load_key_api_csv(const std::string& path);

// Induced subgraph over nodes whose names are key APIs.
CallGraph extract_key_subgraph(const CallGraph& g, const KeyApiSet& keys);

struct CommunityPartition {
    std::vector<std::size_t> community;  // node id -> dense community id
    std::size_t count = 0;
    double gamma = 1.0;
};

// Newman modularity with resolution gamma on the symmetrized, loop-free view.
double modularity(const CallGraph& g, const std::vector<std::size_t>& community,
                  double gamma = 1.0);

// Greedy local moves plus aggregation (Louvain scheme), deterministic for a
// fixed seed. An edgeless graph keeps every node in its own community.
CommunityPartition detect_communities(const CallGraph& g, double gamma = 1.0,
                                      std::uint64_t seed = 0);

struct CentralityTable {
    std::vector<double> out_degree;
    std::vector<double> pagerank;
    std::vector<double> betweenness;
    std::vector<double> closeness;
    std::vector<double> eigenvector;
    double alpha = 0.85;
    std::size_t eigen_iterations = 0;
};

// The five per-community centralities on one community's induced directed
// graph: out-degree over n-1; PageRank by damped power iteration (tol 1e-8,
// max 200 rounds, dangling mass spread uniformly); betweenness by Brandes
// accumulation over exact 128-bit rationals (correctly rounded result, with a
// floating-point fallback once path counts outgrow the safe range); closeness
// with unreachable nodes left out and the result scaled by reached/(n-1);
// eigenvector by power iteration on the symmetrized adjacency plus identity
// (same fixed point, no two-cycle stalls), run to successive-difference
// 1e-12, L2-normalized then rescaled to max 1. A single node scores 0
// everywhere except PageRank 1; an edgeless graph has eigenvector 0.
CentralityTable compute_centralities(const CallGraph& community_subgraph, double alpha = 0.85);

struct ReducedCallGraph {
    CallGraph graph;             // keys plus retained neighbors, induced edges
    std::vector<double> rank;    // R(v) per node id of `graph`
    std::vector<bool> is_key;    // per node id of `graph`
    std::array<double, 5> weights{};
};

// Assigns each non-key out-neighbor of a key node the majority community of
// its adjacent keys, scores everyone by the weighted sum of min-max
// normalized centralities (Eq.-style weights out-degree, pagerank,
// betweenness, closeness, eigenvector), and keeps the top_n ranked neighbors
// per key node.
ReducedCallGraph rank_and_reduce(const CallGraph& g, const KeyApiSet& keys,
                                 const CommunityPartition& partition,
                                 std::array<double, 5> weights = {0.2, 0.2, 0.2, 0.2, 0.2},
                                 std::size_t top_n = 5);

// Depth-first linearization: roots in descending key importance, neighbors in
// descending R (ties to the lower node id), each node emitted once globally,
// truncated to max_len.
std::vector<std::string> dfs_linearize(const ReducedCallGraph& reduced, const KeyApiSet& keys,
                                       std::size_t max_len = 512);

}  // namespace dmldroid::callgraph
