#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

// Brute-force graph oracles. Everything here recomputes from a dense
// adjacency matrix with textbook algorithms (Floyd-Warshall distances, path
// count dynamic programs, dense linear solves, matrix squaring) so none of
// the library's BFS/Brandes/power-iteration code paths are shared.
namespace testsupport {

struct DenseDigraph {
    std::size_t n = 0;
    std::vector<std::vector<int>> a;

    explicit DenseDigraph(std::size_t n_) : n(n_), a(n_, std::vector<int>(n_, 0)) {}
    void edge(std::size_t u, std::size_t v) {
        if (u != v) a[u][v] = 1;
    }
};

constexpr int kUnreach = 1 << 28;

inline std::vector<std::vector<int>> floyd_warshall(const DenseDigraph& g) {
    const std::size_t n = g.n;
    std::vector<std::vector<int>> d(n, std::vector<int>(n, kUnreach));
    for (std::size_t i = 0; i < n; ++i) {
        d[i][i] = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (g.a[i][j]) d[i][j] = 1;
        }
    }
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (d[i][k] + d[k][j] < d[i][j]) d[i][j] = d[i][k] + d[k][j];
            }
        }
    }
    return d;
}

// cnt[s][t] = number of shortest s->t paths, filled in increasing distance.
inline std::vector<std::vector<long long>> shortest_path_counts(
    const DenseDigraph& g, const std::vector<std::vector<int>>& d) {
    const std::size_t n = g.n;
    std::vector<std::vector<long long>> cnt(n, std::vector<long long>(n, 0));
    for (std::size_t t = 0; t < n; ++t) {
        cnt[t][t] = 1;
        for (int dist = 1; dist < static_cast<int>(n); ++dist) {
            for (std::size_t s = 0; s < n; ++s) {
                if (d[s][t] != dist) continue;
                long long c = 0;
                for (std::size_t w = 0; w < n; ++w) {
                    if (g.a[s][w] && d[w][t] == dist - 1) c += cnt[w][t];
                }
                cnt[s][t] = c;
            }
        }
    }
    return cnt;
}

struct ORat {
    long long num = 0;
    long long den = 1;
};

inline long long ogcd(long long a, long long b) {
    while (b != 0) {
        const long long t = a % b;
        a = b;
        b = t;
    }
    return a < 0 ? -a : a;
}

inline ORat onorm(__int128 num, __int128 den) {
    __int128 an = num < 0 ? -num : num;
    __int128 g = an;
    __int128 b = den;
    while (b != 0) {
        const __int128 t = g % b;
        g = b;
        b = t;
    }
    if (g > 1) {
        num /= g;
        den /= g;
    }
    if ((num < 0 ? -num : num) > (__int128(1) << 62) || den > (__int128(1) << 62)) {
        throw std::runtime_error("oracle rational overflow");
    }
    return {static_cast<long long>(num), static_cast<long long>(den)};
}

inline ORat oadd(const ORat& x, const ORat& y) {
    return onorm(static_cast<__int128>(x.num) * y.den + static_cast<__int128>(y.num) * x.den,
                 static_cast<__int128>(x.den) * y.den);
}

inline double orat_to_double(const ORat& f) {
    if (f.num == 0) return 0.0;
    __int128 num = f.num;
    __int128 den = f.den;
    int e = 0;
    while (num / den >= (__int128(1) << 53)) {
        den <<= 1;
        ++e;
    }
    while (num / den < (__int128(1) << 52)) {
        num <<= 1;
        --e;
    }
    __int128 q = num / den;
    const __int128 r = num - q * den;
    if (2 * r > den || (2 * r == den && (q & 1))) {
        ++q;
        if (q == (__int128(1) << 53)) {
            q >>= 1;
            ++e;
        }
    }
    return std::ldexp(static_cast<double>(static_cast<long long>(q)), e);
}

inline std::vector<double> out_degree_oracle(const DenseDigraph& g) {
    std::vector<double> c(g.n, 0.0);
    for (std::size_t v = 0; v < g.n; ++v) {
        int deg = 0;
        for (std::size_t u = 0; u < g.n; ++u) deg += g.a[v][u];
        c[v] = static_cast<double>(deg) / static_cast<double>(g.n - 1);
    }
    return c;
}

inline std::vector<double> betweenness_oracle(const DenseDigraph& g) {
    const auto d = floyd_warshall(g);
    const auto cnt = shortest_path_counts(g, d);
    std::vector<double> c(g.n, 0.0);
    for (std::size_t v = 0; v < g.n; ++v) {
        ORat total{0, 1};
        for (std::size_t s = 0; s < g.n; ++s) {
            for (std::size_t t = 0; t < g.n; ++t) {
                if (s == t || s == v || t == v) continue;
                if (d[s][t] >= kUnreach) continue;
                if (d[s][v] + d[v][t] != d[s][t]) continue;
                const long long through = cnt[s][v] * cnt[v][t];
                const long long g2 = ogcd(through, cnt[s][t]);
                total = oadd(total, ORat{through / g2, cnt[s][t] / g2});
            }
        }
        c[v] = orat_to_double(total);
    }
    return c;
}

inline std::vector<double> closeness_oracle(const DenseDigraph& g) {
    const auto d = floyd_warshall(g);
    std::vector<double> c(g.n, 0.0);
    for (std::size_t v = 0; v < g.n; ++v) {
        double reached = 0.0;
        double sum = 0.0;
        for (std::size_t u = 0; u < g.n; ++u) {
            if (u != v && d[v][u] < kUnreach) {
                reached += 1.0;
                sum += d[v][u];
            }
        }
        if (reached > 0.0) {
            c[v] = (reached / static_cast<double>(g.n - 1)) * (reached / sum);
        }
    }
    return c;
}

// Solves the PageRank fixed point as a dense linear system with partial
// pivoting; dangling nodes contribute a uniform 1/n column.
inline std::vector<double> pagerank_oracle(const DenseDigraph& g, double alpha) {
    const std::size_t n = g.n;
    std::vector<std::vector<double>> A(n, std::vector<double>(n + 1, 0.0));
    for (std::size_t v = 0; v < n; ++v) {
        A[v][v] = 1.0;
        A[v][n] = (1.0 - alpha) / static_cast<double>(n);
    }
    for (std::size_t u = 0; u < n; ++u) {
        int deg = 0;
        for (std::size_t v = 0; v < n; ++v) deg += g.a[u][v];
        if (deg == 0) {
            for (std::size_t v = 0; v < n; ++v) A[v][u] -= alpha / static_cast<double>(n);
        } else {
            for (std::size_t v = 0; v < n; ++v) {
                if (g.a[u][v]) A[v][u] -= alpha / static_cast<double>(deg);
            }
        }
    }
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::fabs(A[r][col]) > std::fabs(A[piv][col])) piv = r;
        }
        std::swap(A[col], A[piv]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col || A[r][col] == 0.0) continue;
            const double f = A[r][col] / A[col][col];
            for (std::size_t c = col; c <= n; ++c) A[r][c] -= f * A[col][c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t v = 0; v < n; ++v) x[v] = A[v][n] / A[v][v];
    return x;
}

// Dominant eigenvector of (sym(A) + I) by repeated matrix squaring applied
// to the all-ones start vector, rescaled so the largest entry is 1.
inline std::vector<double> eigenvector_oracle(const DenseDigraph& g) {
    const std::size_t n = g.n;
    bool any = false;
    std::vector<std::vector<double>> B(n, std::vector<double>(n, 0.0));
    for (std::size_t u = 0; u < n; ++u) {
        B[u][u] = 1.0;
        for (std::size_t v = 0; v < n; ++v) {
            if (u != v && (g.a[u][v] || g.a[v][u])) {
                B[u][v] = 1.0;
                any = true;
            }
        }
    }
    if (!any) return std::vector<double>(n, 0.0);
    for (int step = 0; step < 40; ++step) {
        std::vector<std::vector<double>> C(n, std::vector<double>(n, 0.0));
        double mx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < n; ++k) {
                const double b = B[i][k];
                if (b == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j) C[i][j] += b * B[k][j];
            }
        }
        for (const auto& row : C) {
            for (double v : row) mx = std::max(mx, v);
        }
        for (auto& row : C) {
            for (double& v : row) v /= mx;
        }
        B = std::move(C);
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) x[i] += B[i][j];
    }
    double mx = 0.0;
    for (double v : x) mx = std::max(mx, v);
    if (mx > 0.0) {
        for (double& v : x) v /= mx;
    }
    return x;
}

// Calls f(labels) for every set partition of {0..n-1}, labels being dense
// community ids in restricted-growth-string form.
template <class F>
inline void for_each_partition(std::size_t n, F&& f) {
    std::vector<std::size_t> labels(n, 0);
    auto rec = [&](auto&& self, std::size_t i, std::size_t used) -> void {
        if (i == n) {
            f(labels);
            return;
        }
        for (std::size_t c = 0; c <= used; ++c) {
            labels[i] = c;
            self(self, i + 1, used + (c == used ? 1 : 0));
        }
    };
    rec(rec, 0, 0);
}

// Direct double sum over the symmetrized loop-free adjacency.
inline double modularity_oracle(const DenseDigraph& g, const std::vector<std::size_t>& labels,
                                double gamma) {
    const std::size_t n = g.n;
    std::vector<std::vector<double>> A(n, std::vector<double>(n, 0.0));
    double two_m = 0.0;
    std::vector<double> deg(n, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            if (u != v && (g.a[u][v] || g.a[v][u])) A[u][v] = 1.0;
        }
    }
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) deg[u] += A[u][v];
        two_m += deg[u];
    }
    double q = 0.0;
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            if (labels[u] != labels[v]) continue;
            q += A[u][v] - gamma * deg[u] * deg[v] / two_m;
        }
    }
    return q / two_m;
}

}  // namespace testsupport
