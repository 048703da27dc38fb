#pragma once

// Brute-force reference implementations used to validate the production
// operations, plus the agreement suites behind the CLI `oracle` subcommand.
// Everything here is deliberately naive — explicit loops, full sorts,
// exhaustive enumeration — and shares no code with the paths it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tinymm/attention.hpp"
#include "tinymm/cmai.hpp"
#include "tinymm/linalg.hpp"
#include "tinymm/vmtc.hpp"

namespace tinymm::oracle {

// Plain triple-loop matrix product.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

// Multi-head attention transcribed with per-head, per-element loops and an
// inline softmax.
inline Matrix naive_attention(const Matrix& x, const AttentionParams& params,
                              const MaskMatrix& mask) {
    const std::size_t seq = x.rows();
    const std::size_t d_model = x.cols();
    const std::size_t heads = params.n_heads;
    const std::size_t d_head = d_model / heads;

    auto project = [&](const Matrix& w) {
        Matrix out(seq, d_model);
        for (std::size_t i = 0; i < seq; ++i)
            for (std::size_t j = 0; j < d_model; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < d_model; ++k) s += x(i, k) * w(k, j);
                out(i, j) = s;
            }
        return out;
    };
    const Matrix q = project(params.w_q);
    const Matrix k = project(params.w_k);
    const Matrix v = project(params.w_v);

    Matrix concat(seq, d_model);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < seq; ++i) {
            std::vector<double> scores(seq, 0.0);
            for (std::size_t j = 0; j < seq; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < d_head; ++c)
                    s += q(i, h * d_head + c) * k(j, h * d_head + c);
                scores[j] = s / std::sqrt(static_cast<double>(d_head));
            }
            double mx = -1e300;
            for (std::size_t j = 0; j < seq; ++j)
                if (!mask.masked(i, j) && scores[j] > mx) mx = scores[j];
            std::vector<double> w(seq, 0.0);
            double z = 0.0;
            for (std::size_t j = 0; j < seq; ++j) {
                if (mask.masked(i, j)) continue;
                w[j] = std::exp(scores[j] - mx);
                z += w[j];
            }
            for (std::size_t j = 0; j < seq; ++j) w[j] /= z;
            for (std::size_t c = 0; c < d_head; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < seq; ++j) s += w[j] * v(j, h * d_head + c);
                concat(i, h * d_head + c) = s;
            }
        }
    }

    Matrix out(seq, d_model);
    for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = 0; j < d_model; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d_model; ++c) s += concat(i, c) * params.w_o(c, j);
            out(i, j) = s;
        }
    return out;
}

// Literal triple loop over the neighborhood aggregation sum.
inline Matrix naive_n2i(const Matrix& a_t2n, const Matrix& a_t2i) {
    const std::size_t m = a_t2n.rows();
    const std::size_t n = a_t2i.cols();
    Matrix out(m, n);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < n; ++k) {
            double s = 0.0;
            for (std::size_t h = 0; h < m; ++h) s += a_t2n(j, h) * a_t2i(h, k);
            out(j, k) = s;
        }
    return out;
}

// Full sort of (value, index) pairs, take the first min(floor(gamma*n), n-1).
inline std::vector<std::size_t> naive_quantile_select(const std::vector<double>& row,
                                                      double gamma) {
    const std::size_t n = row.size();
    if (n == 0) return {};
    std::vector<std::pair<double, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i) pairs.emplace_back(row[i], i);
    std::sort(pairs.begin(), pairs.end());
    const auto take = std::min(static_cast<std::size_t>(std::floor(gamma * static_cast<double>(n))),
                               n - 1);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < take; ++i) out.push_back(pairs[i].second);
    std::sort(out.begin(), out.end());
    return out;
}

// Global optimum of the spherical clustering objective by enumerating every
// partition of the tokens into at most `c` non-empty groups. The cost of a
// group is |group| - |sum of its unit-normalized members|, which equals the
// summed cosine distance to the group's normalized mean.
struct ExhaustivePartition {
    std::vector<std::size_t> labels;
    double objective = 0.0;
};

inline ExhaustivePartition exhaustive_kmeans(const Matrix& tokens, std::size_t c) {
    const std::size_t r = tokens.rows();
    const std::size_t d = tokens.cols();
    if (r > 10) throw ValueError("exhaustive_kmeans: limited to 10 tokens");

    std::vector<std::vector<double>> unit(r, std::vector<double>(d));
    for (std::size_t i = 0; i < r; ++i) {
        double norm = 0.0;
        for (std::size_t e = 0; e < d; ++e) norm += tokens(i, e) * tokens(i, e);
        norm = std::sqrt(norm);
        if (norm == 0.0) throw ValueError("exhaustive_kmeans: zero-norm token");
        for (std::size_t e = 0; e < d; ++e) unit[i][e] = tokens(i, e) / norm;
    }

    ExhaustivePartition best;
    best.objective = 1e300;
    std::vector<std::size_t> labels(r, 0);

    auto evaluate = [&](std::size_t n_groups) {
        double total = 0.0;
        for (std::size_t g = 0; g < n_groups; ++g) {
            std::vector<double> sum(d, 0.0);
            std::size_t size = 0;
            for (std::size_t i = 0; i < r; ++i) {
                if (labels[i] != g) continue;
                ++size;
                for (std::size_t e = 0; e < d; ++e) sum[e] += unit[i][e];
            }
            double norm = 0.0;
            for (double v : sum) norm += v * v;
            total += static_cast<double>(size) - std::sqrt(norm);
        }
        if (total < best.objective) {
            best.objective = total;
            best.labels = labels;
        }
    };

    // Restricted-growth enumeration: token i may join groups 0..used, capped at c.
    std::function<void(std::size_t, std::size_t)> recurse = [&](std::size_t i, std::size_t used) {
        if (i == r) {
            evaluate(used);
            return;
        }
        for (std::size_t g = 0; g < used; ++g) {
            labels[i] = g;
            recurse(i + 1, used);
        }
        if (used < c) {
            labels[i] = used;
            recurse(i + 1, used + 1);
        }
    };
    recurse(0, 0);
    return best;
}

// Objective of a production clustering, measured against its own centroids.
inline double clustering_objective(const Matrix& tokens, const ClusterAssignment& a) {
    double total = 0.0;
    for (std::size_t i = 0; i < tokens.rows(); ++i) {
        double norm = 0.0, dp = 0.0;
        for (std::size_t e = 0; e < tokens.cols(); ++e) {
            norm += tokens(i, e) * tokens(i, e);
            dp += tokens(i, e) * a.centroids(a.labels[i], e);
        }
        total += 1.0 - dp / std::sqrt(norm);
    }
    return total;
}

// Per-cluster scalar-loop weighted merge.
inline Matrix naive_merge(const Matrix& tokens, const std::vector<std::size_t>& redundant,
                          const ClusterAssignment& assignment, const ImportanceScores& ips) {
    Matrix out(assignment.n_clusters, tokens.cols());
    for (std::size_t g = 0; g < assignment.n_clusters; ++g)
        for (std::size_t e = 0; e < tokens.cols(); ++e) {
            double s = 0.0;
            for (std::size_t p = 0; p < redundant.size(); ++p)
                if (assignment.labels[p] == g)
                    s += ips.values[redundant[p]] * tokens(redundant[p], e);
            out(g, e) = s;
        }
    return out;
}

// ---- agreement suites -------------------------------------------------

struct SuiteResult {
    std::string name;
    std::size_t cases = 0;
    std::size_t failures = 0;
    double max_deviation = 0.0;
    bool passed() const { return failures == 0; }
};

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.next_gaussian();
    return m;
}

using AttentionFn = std::function<Matrix(const Matrix&, const AttentionParams&, const MaskMatrix&)>;

// Production attention against the naive transcription on random instances.
// `impl` is swappable so the failure path itself can be exercised.
inline SuiteResult attention_suite(std::size_t cases, std::uint64_t seed,
                                   const AttentionFn& impl = nullptr) {
    AttentionFn fn = impl;
    if (!fn)
        fn = [](const Matrix& x, const AttentionParams& p, const MaskMatrix& m) {
            return multi_head_self_attention(x, p, m).first;
        };
    SuiteResult res{"attention", cases, 0, 0.0};
    Rng rng(seed);
    for (std::size_t c = 0; c < cases; ++c) {
        const std::size_t seq = 2 + rng.next_below(7);       // up to 8
        const std::size_t heads = 1 + rng.next_below(4);     // up to 4
        const std::size_t d_model = heads * (1 + rng.next_below(4));
        AttentionParams params;
        params.n_heads = heads;
        params.w_q = random_matrix(rng, d_model, d_model);
        params.w_k = random_matrix(rng, d_model, d_model);
        params.w_v = random_matrix(rng, d_model, d_model);
        params.w_o = random_matrix(rng, d_model, d_model);
        const Matrix x = random_matrix(rng, seq, d_model);
        const MaskMatrix mask = (c % 2 == 0) ? causal_mask(seq) : MaskMatrix(seq, seq);
        const Matrix got = fn(x, params, mask);
        const Matrix want = naive_attention(x, params, mask);
        double dev = 0.0;
        for (std::size_t i = 0; i < seq; ++i)
            for (std::size_t j = 0; j < d_model; ++j)
                dev = std::max(dev, std::abs(got(i, j) - want(i, j)));
        res.max_deviation = std::max(res.max_deviation, dev);
        if (dev > 1e-9) ++res.failures;
    }
    return res;
}

using N2iFn = std::function<Matrix(const Matrix&, const Matrix&)>;

inline SuiteResult n2i_suite(std::size_t cases, std::uint64_t seed, const N2iFn& impl = nullptr) {
    N2iFn fn = impl ? impl : N2iFn(&neighborhood_focus);
    SuiteResult res{"n2i", cases, 0, 0.0};
    Rng rng(seed);
    for (std::size_t c = 0; c < cases; ++c) {
        const std::size_t m = 1 + rng.next_below(8);
        const std::size_t n = 1 + rng.next_below(12);
        const Matrix a_t2n = neighborhood_mask(random_matrix(rng, m, m));
        const Matrix a_t2i = random_matrix(rng, m, n);
        const Matrix got = fn(a_t2n, a_t2i);
        const Matrix want = naive_n2i(a_t2n, a_t2i);
        double dev = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                dev = std::max(dev, std::abs(got(i, j) - want(i, j)));
        res.max_deviation = std::max(res.max_deviation, dev);
        if (dev > 1e-12) ++res.failures;
    }
    return res;
}

using QuantileFn = std::function<std::vector<std::vector<std::size_t>>(const FocusScore&, double)>;

inline SuiteResult quantile_suite(std::size_t cases, std::uint64_t seed,
                                  const QuantileFn& impl = nullptr) {
    QuantileFn fn = impl ? impl : QuantileFn(&inhibition_positions);
    SuiteResult res{"quantile", cases, 0, 0.0};
    Rng rng(seed);
    for (std::size_t c = 0; c < cases; ++c) {
        const std::size_t n = 1 + rng.next_below(24);
        FocusScore fs;
        fs.f = random_matrix(rng, 1, n);
        if (c % 5 == 0) {
            // Force ties so the tie rule is part of the agreement check.
            for (std::size_t j = 0; j < n; ++j) fs.f(0, j) = static_cast<double>(j % 3);
        }
        const double gamma = rng.next_double() * 0.999;
        const auto got = fn(fs, gamma)[0];
        const auto want = naive_quantile_select(fs.f.row(0), gamma);
        if (got != want) ++res.failures;
    }
    return res;
}

// Production spherical k-means against the exhaustive optimum: the objective
// must never beat the optimum, must be within 5% of it on at least 90% of
// instances, and must be non-increasing across iterations on all of them.
inline SuiteResult kmeans_suite(std::size_t cases, std::uint64_t seed) {
    SuiteResult res{"kmeans", cases, 0, 0.0};
    Rng rng(seed);
    std::size_t out_of_band = 0;
    for (std::size_t c = 0; c < cases; ++c) {
        const std::size_t r = 2 + rng.next_below(9);  // up to 10
        const std::size_t d = 2 + rng.next_below(4);
        const std::size_t k = 1 + rng.next_below(r);
        const Matrix tokens = random_matrix(rng, r, d);
        Rng km_rng(seed * 1000 + c);
        const ClusterAssignment got = spherical_kmeans(tokens, k, km_rng, 50, 1e-6);
        const double obj = clustering_objective(tokens, got);
        const ExhaustivePartition best = exhaustive_kmeans(tokens, k);
        if (obj < best.objective - 1e-9) ++res.failures;  // impossible: beat the optimum
        for (std::size_t i = 1; i < got.objective_history.size(); ++i)
            if (got.objective_history[i] > got.objective_history[i - 1] + 1e-12) ++res.failures;
        if (obj > best.objective * 1.05 + 1e-9) ++out_of_band;
        res.max_deviation = std::max(res.max_deviation, obj - best.objective);
    }
    if (out_of_band * 10 > cases) ++res.failures;  // more than 10% off the optimum band
    return res;
}

using MergeFn = std::function<Matrix(const Matrix&, const std::vector<std::size_t>&,
                                     const ClusterAssignment&, const ImportanceScores&)>;

inline SuiteResult merge_suite(std::size_t cases, std::uint64_t seed,
                               const MergeFn& impl = nullptr) {
    MergeFn fn = impl;
    if (!fn)
        fn = [](const Matrix& t, const std::vector<std::size_t>& r, const ClusterAssignment& a,
                const ImportanceScores& s) { return merge_clusters(t, r, a, s, false); };
    SuiteResult res{"merge", cases, 0, 0.0};
    Rng rng(seed);
    for (std::size_t c = 0; c < cases; ++c) {
        const std::size_t n = 4 + rng.next_below(17);  // up to 20 tokens
        const std::size_t d = 2 + rng.next_below(6);
        const Matrix tokens = random_matrix(rng, n, d);
        ImportanceScores ips;
        ips.values.resize(n);
        for (auto& v : ips.values) v = rng.next_double();
        std::vector<std::size_t> redundant;
        for (std::size_t i = 0; i < n; ++i)
            if (rng.next_below(2) == 0) redundant.push_back(i);
        if (redundant.empty()) redundant.push_back(0);
        const std::size_t clusters = 1 + rng.next_below(std::min<std::size_t>(4, redundant.size()));
        ClusterAssignment assignment;
        assignment.n_clusters = clusters;
        assignment.labels.resize(redundant.size());
        for (std::size_t p = 0; p < redundant.size(); ++p)
            assignment.labels[p] = p < clusters ? p : rng.next_below(clusters);
        const Matrix got = fn(tokens, redundant, assignment, ips);
        const Matrix want = naive_merge(tokens, redundant, assignment, ips);
        double dev = 0.0;
        for (std::size_t i = 0; i < got.rows(); ++i)
            for (std::size_t j = 0; j < got.cols(); ++j)
                dev = std::max(dev, std::abs(got(i, j) - want(i, j)));
        res.max_deviation = std::max(res.max_deviation, dev);
        if (dev > 1e-12) ++res.failures;
    }
    return res;
}

inline std::vector<SuiteResult> run_suites(const std::string& which, std::size_t cases,
                                           std::uint64_t seed) {
    std::vector<SuiteResult> results;
    const bool all = which == "all";
    if (all || which == "attention") results.push_back(attention_suite(cases, seed));
    if (all || which == "n2i") results.push_back(n2i_suite(cases, seed));
    if (all || which == "quantile") results.push_back(quantile_suite(cases, seed));
    if (all || which == "kmeans") results.push_back(kmeans_suite(cases, seed));
    if (all || which == "merge") results.push_back(merge_suite(cases, seed));
    if (results.empty()) throw ValueError("unknown oracle suite: " + which);
    return results;
}

}  // namespace tinymm::oracle
