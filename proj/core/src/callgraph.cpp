#include "dmldroid/callgraph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

namespace dmldroid::callgraph {

std::size_t CallGraph::add_node(const std::string& name) {
    auto it = index_.find(name);
    if (it != index_.end()) return it->second;
    const std::size_t id = names_.size();
    index_.emplace(name, id);
    names_.push_back(name);
    out_.emplace_back();
    in_.emplace_back();
    return id;
}

std::size_t CallGraph::id_of(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? npos : it->second;
}

bool CallGraph::has_node(const std::string& name) const { return index_.count(name) != 0; }

bool CallGraph::add_edge(const std::string& u, const std::string& v) {
    return add_edge(add_node(u), add_node(v));
}

bool CallGraph::add_edge(std::size_t u, std::size_t v) {
    if (u >= names_.size() || v >= names_.size()) {
        throw DimensionError("edge endpoint out of range");
    }
    if (u == v) return false;
    auto& o = out_[u];
    auto pos = std::lower_bound(o.begin(), o.end(), v);
    if (pos != o.end() && *pos == v) return false;
    o.insert(pos, v);
    auto& i = in_[v];
    i.insert(std::lower_bound(i.begin(), i.end(), u), u);
    ++edge_count_;
    return true;
}

bool CallGraph::has_edge(std::size_t u, std::size_t v) const {
    if (u >= names_.size() || v >= names_.size()) return false;
    return std::binary_search(out_[u].begin(), out_[u].end(), v);
}

const std::string& CallGraph::name(std::size_t id) const {
    if (id >= names_.size()) throw DimensionError("node id out of range");
    return names_[id];
}

const std::vector<std::size_t>& CallGraph::out(std::size_t id) const {
    if (id >= names_.size()) throw DimensionError("node id out of range");
    return out_[id];
}

const std::vector<std::size_t>& CallGraph::in(std::size_t id) const {
    if (id >= names_.size()) throw DimensionError("node id out of range");
    return in_[id];
}

std::vector<std::pair<std::size_t, std::size_t>> CallGraph::edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> es;
    es.reserve(edge_count_);
    for (std::size_t u = 0; u < names_.size(); ++u) {
        for (std::size_t v : out_[u]) es.emplace_back(u, v);
    }
    return es;
}

CallGraph parse_edge_list(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::set<std::string> nodes;
    std::size_t lineno = 0;
    for (const std::string& line : split_lines(text)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            throw DataError("edge list line " + std::to_string(lineno) +
                            ": expected exactly one tab separator");
        }
        std::string a = line.substr(0, tab);
        std::string b = line.substr(tab + 1);
        if (a.empty() || b.empty()) {
            throw DataError("edge list line " + std::to_string(lineno) + ": empty endpoint");
        }
        nodes.insert(a);
        nodes.insert(b);
        pairs.emplace_back(std::move(a), std::move(b));
    }
    CallGraph g;
    for (const std::string& n : nodes) g.add_node(n);
    for (const auto& [a, b] : pairs) g.add_edge(a, b);
    return g;
}

std::string to_edge_list(const CallGraph& g) {
    std::string out;
    for (std::size_t u = 0; u < g.node_count(); ++u) {
        for (std::size_t v : g.out(u)) {
            out += g.name(u);
            out += '\t';
            out += g.name(v);
            out += '\n';
        }
    }
    return out;
}

CallGraph load_edge_list(const std::string& path) { return parse_edge_list(read_text_file(path)); }

void save_edge_list(const std::string& path, const CallGraph& g) {
    write_text_file(path, to_edge_list(g));
}

bool KeyApiSet::contains(const std::string& api) const {
    return std::find(apis.begin(), apis.end(), api) != apis.end();
}

double KeyApiSet::score_of(const std::string& api) const {
    for (std::size_t i = 0; i < apis.size(); ++i) {
        if (apis[i] == api) return scores[i];
    }
    return 0.0;
}

namespace {

double gini(std::size_t pos, std::size_t total) {
    if (total == 0) return 0.0;
    const double p = static_cast<double>(pos) / static_cast<double>(total);
    return 2.0 * p * (1.0 - p);
}

struct ForestCtx {
    const nn::Matrix& bits;
    const std::vector<std::size_t>& cols;  // survivor column indices into bits
    const std::vector<int>& labels;
    std::vector<double>& importance;       // per survivor
    Rng& rng;
    std::size_t mtry;
    double inv_total;
};

void grow_tree(ForestCtx& ctx, std::vector<std::size_t>& rows, int depth) {
    const std::size_t total = rows.size();
    std::size_t pos = 0;
    for (std::size_t r : rows) pos += static_cast<std::size_t>(ctx.labels[r]);
    if (depth >= 4 || total < 2 || pos == 0 || pos == total) return;
    const double parent = gini(pos, total);

    // partial Fisher-Yates draw of mtry distinct survivor indices
    const std::size_t nf = ctx.cols.size();
    std::vector<std::size_t> feats(nf);
    std::iota(feats.begin(), feats.end(), std::size_t{0});
    for (std::size_t i = 0; i < ctx.mtry; ++i) {
        std::swap(feats[i], feats[i + ctx.rng.below(nf - i)]);
    }
    feats.resize(ctx.mtry);
    std::sort(feats.begin(), feats.end());

    double best_gain = 0.0;
    std::size_t best = CallGraph::npos;
    for (std::size_t f : feats) {
        const std::size_t col = ctx.cols[f];
        std::size_t n1 = 0, p1 = 0;
        for (std::size_t r : rows) {
            if (ctx.bits(r, col) > 0.5) {
                ++n1;
                p1 += static_cast<std::size_t>(ctx.labels[r]);
            }
        }
        const std::size_t n0 = total - n1;
        if (n0 == 0 || n1 == 0) continue;
        const std::size_t p0 = pos - p1;
        const double child =
            (static_cast<double>(n0) * gini(p0, n0) + static_cast<double>(n1) * gini(p1, n1)) /
            static_cast<double>(total);
        const double gain = parent - child;
        if (gain > best_gain + 1e-15) {
            best_gain = gain;
            best = f;
        }
    }
    if (best == CallGraph::npos || best_gain <= 1e-12) return;
    ctx.importance[best] += best_gain * static_cast<double>(total) * ctx.inv_total;

    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) {
        (ctx.bits(r, ctx.cols[best]) > 0.5 ? right : left).push_back(r);
    }
    grow_tree(ctx, left, depth + 1);
    grow_tree(ctx, right, depth + 1);
}

}  // namespace

KeyApiSet select_key_apis(const tabular::BinaryFeatureMatrix& api_presence,
                          const std::vector<int>& labels, std::size_t k, double df_min,
                          std::uint64_t seed) {
    const std::size_t m = api_presence.samples();
    const std::size_t n = api_presence.features();
    if (labels.size() != m) {
        throw DimensionError("label count " + std::to_string(labels.size()) +
                             " does not match sample count " + std::to_string(m));
    }
    if (m == 0 || n == 0) throw DataError("key API selection needs a nonempty presence matrix");
    if (df_min < 0.0 || df_min > 1.0) throw ConfigError("df_min must lie in [0,1]");
    std::size_t n_mal = 0, n_ben = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
        if (y == 1) {
            ++n_mal;
        } else {
            ++n_ben;
        }
    }
    if (n_mal == 0 || n_ben == 0) throw DataError("key API selection needs both classes present");

    std::vector<std::size_t> survivors;
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t cm = 0, cb = 0;
        for (std::size_t i = 0; i < m; ++i) {
            if (api_presence.bits(i, j) > 0.5) {
                if (labels[i] == 1) {
                    ++cm;
                } else {
                    ++cb;
                }
            }
        }
        const double dfm = static_cast<double>(cm) / static_cast<double>(n_mal);
        const double dfb = static_cast<double>(cb) / static_cast<double>(n_ben);
        if (dfm >= df_min || dfb >= df_min) survivors.push_back(j);
    }

    std::vector<double> importance(survivors.size(), 0.0);
    if (!survivors.empty()) {
        Rng rng(derive_seed(seed, "keyapi.forest"));
        const std::size_t mtry = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(survivors.size())))));
        ForestCtx ctx{api_presence.bits, survivors, labels, importance, rng, mtry,
                      1.0 / static_cast<double>(m)};
        const std::size_t trees = 64;
        for (std::size_t t = 0; t < trees; ++t) {
            std::vector<std::size_t> rows(m);
            for (std::size_t i = 0; i < m; ++i) rows[i] = rng.below(m);
            grow_tree(ctx, rows, 0);
        }
        for (double& s : importance) s /= static_cast<double>(trees);
    }

    std::vector<std::size_t> order;
    for (std::size_t s = 0; s < survivors.size(); ++s) {
        if (importance[s] > 0.0) order.push_back(s);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (importance[a] != importance[b]) return importance[a] > importance[b];
        return api_presence.feature_names[survivors[a]] < api_presence.feature_names[survivors[b]];
    });
    if (order.size() < k) {
        std::cerr << "warning: only " << order.size() << " informative APIs for requested top "
                  << k << "\n";
    } else {
        order.resize(k);
    }

    KeyApiSet keys;
    keys.apis.reserve(order.size());
    keys.scores.reserve(order.size());
    for (std::size_t s : order) {
        keys.apis.push_back(api_presence.feature_names[survivors[s]]);
        keys.scores.push_back(importance[s]);
    }
    return keys;
}

void save_key_api_csv(const std::string& path, const KeyApiSet& keys) {
    std::string text = "api,score\n";
    for (std::size_t i = 0; i < keys.size(); ++i) {
        text += keys.apis[i];
        text += ',';
        text += format_double(keys.scores[i]);
        text += '\n';
    }
    write_text_file(path, text);
}

KeyApiSet load_key_api_csv(const std::string& path) {
    const std::vector<std::string> lines = split_lines(read_text_file(path));
    if (lines.empty() || lines[0] != "api,score") {
        throw FormatError("key API csv: missing api,score header");
    }
    KeyApiSet keys;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto comma = lines[i].rfind(',');
        if (comma == std::string::npos || comma == 0) {
            throw FormatError("key API csv line " + std::to_string(i + 1) + ": expected api,score");
        }
        keys.apis.push_back(lines[i].substr(0, comma));
        double score = 0.0;
        try {
            score = std::stod(lines[i].substr(comma + 1));
        } catch (const std::exception&) {
            throw FormatError("key API csv line " + std::to_string(i + 1) + ": bad score");
        }
        keys.scores.push_back(score);
    }
    return keys;
}

CallGraph extract_key_subgraph(const CallGraph& g, const KeyApiSet& keys) {
    std::set<std::string> present;
    for (const std::string& api : keys.apis) {
        if (g.has_node(api)) present.insert(api);
    }
    CallGraph sub;
    for (const std::string& name : present) sub.add_node(name);
    for (const std::string& name : present) {
        const std::size_t u = g.id_of(name);
        for (std::size_t v : g.out(u)) {
            if (present.count(g.name(v))) sub.add_edge(sub.id_of(name), sub.id_of(g.name(v)));
        }
    }
    return sub;
}

namespace {

// Undirected pair set of the symmetrized, loop-free view.
std::set<std::pair<std::size_t, std::size_t>> symmetric_pairs(const CallGraph& g) {
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& [u, v] : g.edges()) {
        pairs.emplace(std::min(u, v), std::max(u, v));
    }
    return pairs;
}

}  // namespace

double modularity(const CallGraph& g, const std::vector<std::size_t>& community, double gamma) {
    const std::size_t n = g.node_count();
    if (community.size() != n) {
        throw DimensionError("community assignment size " + std::to_string(community.size()) +
                             " does not match node count " + std::to_string(n));
    }
    if (!(gamma > 0.0)) throw ConfigError("resolution must be positive");
    const auto pairs = symmetric_pairs(g);
    const double m = static_cast<double>(pairs.size());
    if (pairs.empty()) throw DataError("modularity needs at least one edge");

    std::vector<double> deg(n, 0.0);
    double intra = 0.0;
    for (const auto& [u, v] : pairs) {
        deg[u] += 1.0;
        deg[v] += 1.0;
        if (community[u] == community[v]) intra += 2.0;
    }
    std::map<std::size_t, double> comm_deg;
    for (std::size_t v = 0; v < n; ++v) comm_deg[community[v]] += deg[v];
    double null_term = 0.0;
    for (const auto& [c, d] : comm_deg) null_term += d * d;
    return intra / (2.0 * m) - gamma * null_term / (4.0 * m * m);
}

namespace {

// Weighted symmetric multigraph for the aggregation phase. `loop[u]` stores
// the ordered-pair weight of the self edge, so degrees and the total weight
// m2 are preserved across levels.
struct LvGraph {
    std::size_t n = 0;
    std::vector<std::vector<std::pair<std::size_t, double>>> adj;
    std::vector<double> loop;
    std::vector<double> deg;
    double m2 = 0.0;
};

LvGraph symmetrize(const CallGraph& g) {
    LvGraph lg;
    lg.n = g.node_count();
    lg.adj.resize(lg.n);
    lg.loop.assign(lg.n, 0.0);
    lg.deg.assign(lg.n, 0.0);
    for (const auto& [u, v] : symmetric_pairs(g)) {
        lg.adj[u].emplace_back(v, 1.0);
        lg.adj[v].emplace_back(u, 1.0);
    }
    for (std::size_t u = 0; u < lg.n; ++u) {
        std::sort(lg.adj[u].begin(), lg.adj[u].end());
        for (const auto& [v, w] : lg.adj[u]) lg.deg[u] += w;
        lg.deg[u] += lg.loop[u];
        lg.m2 += lg.deg[u];
    }
    return lg;
}

bool local_moves(const LvGraph& lg, std::vector<std::size_t>& comm, double gamma, Rng& rng) {
    std::vector<double> tot(lg.n, 0.0);
    for (std::size_t u = 0; u < lg.n; ++u) tot[comm[u]] += lg.deg[u];
    std::vector<std::size_t> order(lg.n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    bool any = false;
    bool moved = true;
    while (moved) {
        moved = false;
        rng.shuffle(order);
        for (std::size_t u : order) {
            const std::size_t cu = comm[u];
            std::map<std::size_t, double> wto;
            for (const auto& [v, w] : lg.adj[u]) wto[comm[v]] += w;
            tot[cu] -= lg.deg[u];
            const double scale = 2.0 / lg.m2;
            const double pen = 2.0 * gamma * lg.deg[u] / (lg.m2 * lg.m2);
            auto own_it = wto.find(cu);
            double best_gain =
                scale * (own_it == wto.end() ? 0.0 : own_it->second) - pen * tot[cu];
            std::size_t best_c = cu;
            for (const auto& [c, w] : wto) {
                if (c == cu) continue;
                const double gain = scale * w - pen * tot[c];
                if (gain > best_gain + 1e-12) {
                    best_gain = gain;
                    best_c = c;
                }
            }
            tot[best_c] += lg.deg[u];
            if (best_c != cu) {
                comm[u] = best_c;
                moved = true;
                any = true;
            }
        }
    }
    return any;
}

LvGraph aggregate(const LvGraph& lg, const std::vector<std::size_t>& dense_comm,
                  std::size_t ncomm) {
    LvGraph out;
    out.n = ncomm;
    out.adj.resize(ncomm);
    out.loop.assign(ncomm, 0.0);
    out.deg.assign(ncomm, 0.0);
    std::vector<std::map<std::size_t, double>> acc(ncomm);
    for (std::size_t u = 0; u < lg.n; ++u) {
        const std::size_t cu = dense_comm[u];
        out.loop[cu] += lg.loop[u];
        for (const auto& [v, w] : lg.adj[u]) {
            const std::size_t cv = dense_comm[v];
            if (cu == cv) {
                out.loop[cu] += w;  // both directions land here, keeping ordered-pair weight
            } else {
                acc[cu][cv] += w;
            }
        }
    }
    for (std::size_t c = 0; c < ncomm; ++c) {
        out.adj[c].assign(acc[c].begin(), acc[c].end());
        for (const auto& [v, w] : out.adj[c]) out.deg[c] += w;
        out.deg[c] += out.loop[c];
        out.m2 += out.deg[c];
    }
    return out;
}

}  // namespace

CommunityPartition detect_communities(const CallGraph& g, double gamma, std::uint64_t seed) {
    if (!(gamma > 0.0)) throw ConfigError("resolution must be positive");
    const std::size_t n = g.node_count();
    CommunityPartition part;
    part.gamma = gamma;
    part.community.resize(n);
    std::iota(part.community.begin(), part.community.end(), std::size_t{0});
    part.count = n;
    if (n == 0) return part;

    LvGraph lg = symmetrize(g);
    if (lg.m2 == 0.0) return part;  // edgeless: singletons

    Rng rng(derive_seed(seed, "louvain"));
    std::vector<std::size_t> assign(n);
    std::iota(assign.begin(), assign.end(), std::size_t{0});
    while (true) {
        std::vector<std::size_t> comm(lg.n);
        std::iota(comm.begin(), comm.end(), std::size_t{0});
        const bool any = local_moves(lg, comm, gamma, rng);
        std::vector<std::size_t> remap(lg.n, CallGraph::npos);
        std::size_t next = 0;
        for (std::size_t u = 0; u < lg.n; ++u) {
            if (remap[comm[u]] == CallGraph::npos) remap[comm[u]] = next++;
        }
        for (std::size_t u = 0; u < lg.n; ++u) comm[u] = remap[comm[u]];
        for (std::size_t v = 0; v < n; ++v) assign[v] = comm[assign[v]];
        if (!any || next == lg.n) break;
        lg = aggregate(lg, comm, next);
    }

    std::vector<std::size_t> remap_final;
    std::map<std::size_t, std::size_t> seen;
    for (std::size_t v = 0; v < n; ++v) {
        auto it = seen.find(assign[v]);
        if (it == seen.end()) it = seen.emplace(assign[v], seen.size()).first;
        part.community[v] = it->second;
    }
    part.count = seen.size();
    return part;
}

namespace {

// Directed BFS distances from s; -1 marks unreachable.
void bfs(const CallGraph& g, std::size_t s, std::vector<int>& dist) {
    dist.assign(g.node_count(), -1);
    dist[s] = 0;
    std::deque<std::size_t> q{s};
    while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop_front();
        for (std::size_t v : g.out(u)) {
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
}

// Exact rational accumulation for betweenness. Dependency ratios like 1/3 do
// not round the same way under different summation orders, so the dependency
// sums are kept as reduced 128-bit fractions and converted once at the end;
// the result is then the correctly rounded value of the exact quantity.
using i128 = __int128;

struct Frac {
    i128 num = 0;
    i128 den = 1;
};

i128 abs128(i128 v) { return v < 0 ? -v : v; }

i128 gcd128(i128 a, i128 b) {
    while (b != 0) {
        const i128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

constexpr i128 kFracLimit = i128(1) << 62;

Frac frac_reduce(i128 num, i128 den, bool& ok) {
    const i128 g = gcd128(abs128(num), den);
    if (g > 1) {
        num /= g;
        den /= g;
    }
    if (abs128(num) > kFracLimit || den > kFracLimit) ok = false;
    return {num, den};
}

Frac frac_add(const Frac& a, const Frac& b, bool& ok) {
    return frac_reduce(a.num * b.den + b.num * a.den, a.den * b.den, ok);
}

Frac frac_mul(const Frac& a, const Frac& b, bool& ok) {
    return frac_reduce(a.num * b.num, a.den * b.den, ok);
}

// Nearest double (ties to even) of a nonnegative reduced fraction.
double frac_to_double(const Frac& f) {
    if (f.num == 0) return 0.0;
    i128 num = f.num;
    i128 den = f.den;
    int e = 0;
    while (num / den >= (i128(1) << 53)) {
        den <<= 1;
        ++e;
    }
    while (num / den < (i128(1) << 52)) {
        num <<= 1;
        --e;
    }
    i128 q = num / den;
    const i128 r = num - q * den;
    if (2 * r > den || (2 * r == den && (q & 1))) {
        ++q;
        if (q == (i128(1) << 53)) {
            q >>= 1;
            ++e;
        }
    }
    return std::ldexp(static_cast<double>(static_cast<long long>(q)), e);
}

// Brandes accumulation over exact fractions; false when a path count or a
// fraction outgrows the 128-bit safe range.
bool brandes_exact(const CallGraph& g, std::vector<double>& out) {
    const std::size_t n = g.node_count();
    bool ok = true;
    std::vector<Frac> total(n);
    std::vector<unsigned long long> sigma(n);
    std::vector<int> dist(n);
    std::vector<std::vector<std::size_t>> pred(n);
    std::vector<Frac> delta(n);
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < n && ok; ++s) {
        std::fill(sigma.begin(), sigma.end(), 0ull);
        std::fill(dist.begin(), dist.end(), -1);
        std::fill(delta.begin(), delta.end(), Frac{});
        for (auto& p : pred) p.clear();
        stack.clear();
        sigma[s] = 1;
        dist[s] = 0;
        std::deque<std::size_t> q{s};
        while (!q.empty()) {
            const std::size_t u = q.front();
            q.pop_front();
            stack.push_back(u);
            for (std::size_t v : g.out(u)) {
                if (dist[v] < 0) {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
                if (dist[v] == dist[u] + 1) {
                    sigma[v] += sigma[u];
                    if (sigma[v] > (1ull << 62)) ok = false;
                    pred[v].push_back(u);
                }
            }
        }
        for (std::size_t i = stack.size(); i-- > 0 && ok;) {
            const std::size_t w = stack[i];
            const Frac one_plus = frac_add(Frac{1, 1}, delta[w], ok);
            for (std::size_t u : pred[w]) {
                const Frac ratio = frac_reduce(static_cast<i128>(sigma[u]),
                                               static_cast<i128>(sigma[w]), ok);
                delta[u] = frac_add(delta[u], frac_mul(ratio, one_plus, ok), ok);
            }
            if (w != s) total[w] = frac_add(total[w], delta[w], ok);
        }
    }
    if (!ok) return false;
    for (std::size_t v = 0; v < n; ++v) out[v] = frac_to_double(total[v]);
    return true;
}

void brandes_double(const CallGraph& g, std::vector<double>& out) {
    const std::size_t n = g.node_count();
    std::fill(out.begin(), out.end(), 0.0);
    std::vector<double> sigma(n), delta(n);
    std::vector<int> dist(n);
    std::vector<std::vector<std::size_t>> pred(n);
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < n; ++s) {
        std::fill(sigma.begin(), sigma.end(), 0.0);
        std::fill(dist.begin(), dist.end(), -1);
        std::fill(delta.begin(), delta.end(), 0.0);
        for (auto& p : pred) p.clear();
        stack.clear();
        sigma[s] = 1.0;
        dist[s] = 0;
        std::deque<std::size_t> q{s};
        while (!q.empty()) {
            const std::size_t u = q.front();
            q.pop_front();
            stack.push_back(u);
            for (std::size_t v : g.out(u)) {
                if (dist[v] < 0) {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
                if (dist[v] == dist[u] + 1) {
                    sigma[v] += sigma[u];
                    pred[v].push_back(u);
                }
            }
        }
        for (std::size_t i = stack.size(); i-- > 0;) {
            const std::size_t w = stack[i];
            for (std::size_t u : pred[w]) {
                delta[u] += sigma[u] / sigma[w] * (1.0 + delta[w]);
            }
            if (w != s) out[w] += delta[w];
        }
    }
}

}  // namespace

CentralityTable compute_centralities(const CallGraph& g, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("damping factor must lie in (0,1)");
    const std::size_t n = g.node_count();
    CentralityTable t;
    t.alpha = alpha;
    t.out_degree.assign(n, 0.0);
    t.pagerank.assign(n, 0.0);
    t.betweenness.assign(n, 0.0);
    t.closeness.assign(n, 0.0);
    t.eigenvector.assign(n, 0.0);
    if (n == 0) return t;
    if (n == 1) {
        t.pagerank[0] = 1.0;
        return t;
    }
    const double nm1 = static_cast<double>(n - 1);

    for (std::size_t v = 0; v < n; ++v) {
        t.out_degree[v] = static_cast<double>(g.out(v).size()) / nm1;
    }

    {
        std::vector<double> x(n, 1.0 / static_cast<double>(n)), y(n);
        for (std::size_t it = 0; it < 200; ++it) {
            double dangling = 0.0;
            for (std::size_t u = 0; u < n; ++u) {
                if (g.out(u).empty()) dangling += x[u];
            }
            const double base = (1.0 - alpha) / static_cast<double>(n) +
                                alpha * dangling / static_cast<double>(n);
            std::fill(y.begin(), y.end(), base);
            for (std::size_t u = 0; u < n; ++u) {
                const auto& ou = g.out(u);
                if (ou.empty()) continue;
                const double share = alpha * x[u] / static_cast<double>(ou.size());
                for (std::size_t v : ou) y[v] += share;
            }
            double diff = 0.0;
            for (std::size_t v = 0; v < n; ++v) diff += std::fabs(y[v] - x[v]);
            x.swap(y);
            if (diff < 1e-8) break;
        }
        t.pagerank = x;
    }

    if (!brandes_exact(g, t.betweenness)) brandes_double(g, t.betweenness);

    {
        std::vector<int> dist;
        for (std::size_t v = 0; v < n; ++v) {
            bfs(g, v, dist);
            double sum = 0.0;
            double reached = 0.0;
            for (std::size_t u = 0; u < n; ++u) {
                if (u != v && dist[u] > 0) {
                    sum += dist[u];
                    reached += 1.0;
                }
            }
            if (reached > 0.0) t.closeness[v] = (reached / nm1) * (reached / sum);
        }
    }

    {
        std::vector<std::vector<std::size_t>> sym(n);
        std::size_t sym_edges = 0;
        for (const auto& [u, v] : symmetric_pairs(g)) {
            sym[u].push_back(v);
            sym[v].push_back(u);
            ++sym_edges;
        }
        if (sym_edges > 0) {
            std::vector<double> x(n, 1.0 / std::sqrt(static_cast<double>(n))), y(n);
            for (std::size_t it = 1; it <= 20000; ++it) {
                for (std::size_t v = 0; v < n; ++v) {
                    double acc = x[v];  // identity shift keeps two-cycles from stalling
                    for (std::size_t u : sym[v]) acc += x[u];
                    y[v] = acc;
                }
                double norm = 0.0;
                for (double vy : y) norm += vy * vy;
                norm = std::sqrt(norm);
                double diff = 0.0;
                for (std::size_t v = 0; v < n; ++v) {
                    y[v] /= norm;
                    diff = std::max(diff, std::fabs(y[v] - x[v]));
                }
                x = y;
                t.eigen_iterations = it;
                if (diff < 1e-12) break;
            }
            const double mx = *std::max_element(x.begin(), x.end());
            if (mx > 0.0) {
                for (double& vx : x) vx /= mx;
            }
            t.eigenvector = x;
        }
    }
    return t;
}

ReducedCallGraph rank_and_reduce(const CallGraph& g, const KeyApiSet& keys,
                                 const CommunityPartition& partition,
                                 std::array<double, 5> weights, std::size_t top_n) {
    double wsum = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w)) throw ConfigError("rank weights must be finite");
        wsum += std::fabs(w);
    }
    if (wsum == 0.0) throw ConfigError("rank weights must not all be zero");

    const CallGraph sub = extract_key_subgraph(g, keys);
    if (partition.community.size() != sub.node_count()) {
        throw DimensionError("partition covers " + std::to_string(partition.community.size()) +
                             " nodes but the key subgraph has " +
                             std::to_string(sub.node_count()));
    }

    const std::size_t n = g.node_count();
    std::vector<std::size_t> comm(n, CallGraph::npos);
    std::vector<bool> is_key(n, false);
    for (std::size_t sid = 0; sid < sub.node_count(); ++sid) {
        const std::size_t gid = g.id_of(sub.name(sid));
        comm[gid] = partition.community[sid];
        is_key[gid] = true;
    }

    // Each non-key out-neighbor of a key joins the majority community of its
    // adjacent keys; ties go to the lowest community id.
    std::vector<std::map<std::size_t, std::size_t>> votes(n);
    for (std::size_t u = 0; u < n; ++u) {
        if (!is_key[u]) continue;
        for (std::size_t v : g.out(u)) {
            if (!is_key[v]) votes[v][comm[u]] += 1;
        }
    }
    for (std::size_t v = 0; v < n; ++v) {
        if (votes[v].empty()) continue;
        std::size_t best_c = CallGraph::npos, best_count = 0;
        for (const auto& [c, cnt] : votes[v]) {
            if (cnt > best_count) {
                best_count = cnt;
                best_c = c;
            }
        }
        comm[v] = best_c;
    }

    const std::size_t ncomm = partition.count;
    std::vector<std::vector<std::size_t>> members(ncomm);
    for (std::size_t v = 0; v < n; ++v) {
        if (comm[v] != CallGraph::npos) members[comm[v]].push_back(v);
    }

    std::vector<double> rank(n, 0.0);
    for (std::size_t c = 0; c < ncomm; ++c) {
        const auto& mem = members[c];
        if (mem.empty()) continue;
        CallGraph cg;
        for (std::size_t v : mem) cg.add_node(g.name(v));
        for (std::size_t v : mem) {
            for (std::size_t w : g.out(v)) {
                if (comm[w] == c) cg.add_edge(cg.id_of(g.name(v)), cg.id_of(g.name(w)));
            }
        }
        const CentralityTable ct = compute_centralities(cg);
        const std::array<const std::vector<double>*, 5> measures{
            &ct.out_degree, &ct.pagerank, &ct.betweenness, &ct.closeness, &ct.eigenvector};
        std::vector<double> score(mem.size(), 0.0);
        for (std::size_t mi = 0; mi < 5; ++mi) {
            const std::vector<double>& vals = *measures[mi];
            double mn = vals[0], mx = vals[0];
            for (double v : vals) {
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
            const double range = mx - mn;
            if (range <= 0.0) continue;  // constant measure normalizes to zero
            for (std::size_t i = 0; i < mem.size(); ++i) {
                const std::size_t cid = cg.id_of(g.name(mem[i]));
                score[i] += weights[mi] * (vals[cid] - mn) / range;
            }
        }
        for (std::size_t i = 0; i < mem.size(); ++i) rank[mem[i]] = score[i];
    }

    std::set<std::size_t> keep;
    for (std::size_t u = 0; u < n; ++u) {
        if (!is_key[u]) continue;
        keep.insert(u);
        std::vector<std::size_t> cand;
        for (std::size_t v : g.out(u)) {
            if (!is_key[v]) cand.push_back(v);
        }
        std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
            if (rank[a] != rank[b]) return rank[a] > rank[b];
            return a < b;
        });
        if (cand.size() > top_n) cand.resize(top_n);
        keep.insert(cand.begin(), cand.end());
    }

    ReducedCallGraph out;
    out.weights = weights;
    for (std::size_t v : keep) out.graph.add_node(g.name(v));
    for (std::size_t v : keep) {
        for (std::size_t w : g.out(v)) {
            if (keep.count(w)) out.graph.add_edge(out.graph.id_of(g.name(v)), out.graph.id_of(g.name(w)));
        }
    }
    out.rank.assign(out.graph.node_count(), 0.0);
    out.is_key.assign(out.graph.node_count(), false);
    for (std::size_t v : keep) {
        const std::size_t rid = out.graph.id_of(g.name(v));
        out.rank[rid] = rank[v];
        out.is_key[rid] = is_key[v];
    }
    return out;
}

std::vector<std::string> dfs_linearize(const ReducedCallGraph& reduced, const KeyApiSet& keys,
                                       std::size_t max_len) {
    const CallGraph& g = reduced.graph;
    std::vector<std::string> seq;
    std::vector<bool> visited(g.node_count(), false);
    for (const std::string& api : keys.apis) {
        if (seq.size() >= max_len) break;
        const std::size_t root = g.id_of(api);
        if (root == CallGraph::npos || visited[root]) continue;
        std::vector<std::size_t> stack{root};
        while (!stack.empty() && seq.size() < max_len) {
            const std::size_t v = stack.back();
            stack.pop_back();
            if (visited[v]) continue;
            visited[v] = true;
            seq.push_back(g.name(v));
            std::vector<std::size_t> next;
            for (std::size_t w : g.out(v)) {
                if (!visited[w]) next.push_back(w);
            }
            std::sort(next.begin(), next.end(), [&](std::size_t a, std::size_t b) {
                if (reduced.rank[a] != reduced.rank[b]) return reduced.rank[a] > reduced.rank[b];
                return a < b;
            });
            for (std::size_t i = next.size(); i-- > 0;) stack.push_back(next[i]);
        }
    }
    return seq;
}

}  // namespace dmldroid::callgraph
