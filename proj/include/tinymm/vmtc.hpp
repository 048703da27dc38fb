#pragma once

// Visual-modality token compression. Patch tokens are ranked by the attention
// the class token pays them; the top k survive verbatim and the rest are
// clustered on the unit sphere and merged into one weighted token per cluster.
// Also hosts the two baselines: spatial down-sampling of the token grid and
// pruning applied only after the final encoder block.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tinymm/error.hpp"
#include "tinymm/linalg.hpp"

namespace tinymm {

// One score per patch token, class token excluded.
struct ImportanceScores {
    std::vector<double> values;
};

// Disjoint split of patch indices; primary tokens outrank every redundant one.
struct TokenPartition {
    std::vector<std::size_t> primary;    // sorted ascending, length k
    std::vector<std::size_t> redundant;  // sorted ascending, length n - k
};

// Labels are indexed by position within the clustered token list. Cluster ids
// are canonical: ascending by smallest member position. `objective_history`
// holds the clustering objective (sum of 1 - cos(token, its centroid)) after
// each completed iteration.
struct ClusterAssignment {
    std::size_t n_clusters = 0;
    std::vector<std::size_t> labels;
    Matrix centroids;  // n_clusters x d, unit rows
    std::vector<double> objective_history;
};

struct KmeansParams {
    std::size_t max_iter = 50;
    double tol = 1e-6;
    std::uint64_t seed = 1;
};

enum class CompressionMode { kOff, kVmtc, kSpd, kLlp };

struct VmtcConfig {
    CompressionMode mode = CompressionMode::kOff;
    double target_keep_ratio = 0.5;
    std::size_t num_stages = 3;
    std::size_t clusters_per_stage = 4;
    bool normalize_merge = false;
    bool cls_as_key = false;  // read importance from the class-token column instead of its row
    std::size_t spd_factor = 2;
    std::vector<std::size_t> insertion_layers;  // derived from depth when empty
    KmeansParams kmeans;
};

// Importance of each patch token, read from the class-token row of the
// head-averaged attention weights (class token as query). The column reading
// (class token as key) is the ablation flag.
inline ImportanceScores importance_scores(const Matrix& a_w, bool cls_as_key = false) {
    if (a_w.rows() != a_w.cols()) throw ShapeError("importance_scores: matrix must be square");
    if (a_w.rows() == 0) throw ShapeError("importance_scores: empty matrix");
    const std::size_t n = a_w.rows() - 1;
    ImportanceScores s;
    s.values.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        s.values[i] = cls_as_key ? a_w(i + 1, 0) : a_w(0, i + 1);
    return s;
}

// Top k by importance become primary; everything else is redundant. Ties go
// to the lower index, both lists sorted ascending.
inline TokenPartition partition_tokens(const ImportanceScores& ips, std::size_t k) {
    const std::size_t n = ips.values.size();
    TokenPartition p;
    p.primary = top_rank_indices(ips.values, k);
    std::vector<bool> is_primary(n, false);
    for (std::size_t i : p.primary) is_primary[i] = true;
    p.redundant.reserve(n - k);
    for (std::size_t i = 0; i < n; ++i)
        if (!is_primary[i]) p.redundant.push_back(i);
    return p;
}

namespace detail {

inline std::vector<double> unit_row(const Matrix& m, std::size_t i) {
    std::vector<double> r = m.row(i);
    const double norm = vector_norm(r);
    if (norm == 0.0) throw ValueError("spherical_kmeans: zero-norm token " + std::to_string(i));
    for (double& x : r) x /= norm;
    return r;
}

// Relabel clusters so ids ascend with the smallest member position.
inline void canonicalize_clusters(ClusterAssignment& a, std::size_t dim) {
    std::vector<std::size_t> remap(a.n_clusters, a.n_clusters);
    std::size_t next = 0;
    for (std::size_t old : a.labels)
        if (remap[old] == a.n_clusters) remap[old] = next++;
    Matrix centroids(a.n_clusters, dim);
    for (std::size_t c = 0; c < a.n_clusters; ++c)
        for (std::size_t j = 0; j < dim; ++j) centroids(remap[c], j) = a.centroids(c, j);
    for (std::size_t& l : a.labels) l = remap[l];
    a.centroids = std::move(centroids);
}

// One seeded k-means++ run over pre-normalized tokens. Assumes r > s >= 1.
inline ClusterAssignment skmeans_once(const std::vector<std::vector<double>>& unit, std::size_t s,
                                      std::size_t d, Rng& rng, std::size_t max_iter, double tol) {
    const std::size_t r = unit.size();
    ClusterAssignment out;
    out.n_clusters = s;
    out.labels.assign(r, 0);
    out.centroids = Matrix(s, d);

    // k-means++ on cosine distance.
    std::vector<std::size_t> chosen;
    chosen.push_back(static_cast<std::size_t>(rng.next_below(r)));
    out.centroids.set_row(0, unit[chosen[0]]);
    std::vector<double> dist(r);
    for (std::size_t j = 1; j < s; ++j) {
        double total = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < j; ++k) {
                std::vector<double> cent = out.centroids.row(k);
                best = std::min(best, 1.0 - dot(unit[i], cent));
            }
            dist[i] = std::max(best, 0.0);
            total += dist[i] * dist[i];
        }
        std::size_t pick = r;
        if (total > 0.0) {
            const double u = rng.next_double() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < r; ++i) {
                acc += dist[i] * dist[i];
                if (acc > u) {
                    pick = i;
                    break;
                }
            }
        }
        if (pick == r) {
            // All mass zero (duplicate tokens): take the lowest index not yet chosen.
            for (std::size_t i = 0; i < r; ++i) {
                bool used = false;
                for (std::size_t ch : chosen) used = used || ch == i;
                if (!used) {
                    pick = i;
                    break;
                }
            }
        }
        chosen.push_back(pick);
        out.centroids.set_row(j, unit[pick]);
    }

    std::vector<std::vector<double>> prev_centroids(s);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        for (std::size_t k = 0; k < s; ++k) prev_centroids[k] = out.centroids.row(k);

        // Assign to the nearest centroid; ties to the lower cluster id.
        std::vector<std::size_t> counts(s, 0);
        for (std::size_t i = 0; i < r; ++i) {
            std::size_t best = 0;
            double best_cos = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < s; ++k) {
                double cs = 0.0;
                for (std::size_t e = 0; e < d; ++e) cs += unit[i][e] * out.centroids(k, e);
                if (cs > best_cos) {
                    best_cos = cs;
                    best = k;
                }
            }
            out.labels[i] = best;
        }
        for (std::size_t l : out.labels) ++counts[l];

        // Reseed empty clusters with the token farthest from its centroid,
        // drawing only from clusters that can spare a member.
        for (std::size_t k = 0; k < s; ++k) {
            if (counts[k] > 0) continue;
            std::size_t worst = r;
            double worst_dist = -1.0;
            for (std::size_t i = 0; i < r; ++i) {
                if (counts[out.labels[i]] < 2) continue;
                double cs = 0.0;
                for (std::size_t e = 0; e < d; ++e) cs += unit[i][e] * out.centroids(out.labels[i], e);
                const double dd = 1.0 - cs;
                if (dd > worst_dist) {
                    worst_dist = dd;
                    worst = i;
                }
            }
            --counts[out.labels[worst]];
            out.labels[worst] = k;
            counts[k] = 1;
            out.centroids.set_row(k, unit[worst]);
        }

        // Centroid update: normalized mean of the unit-normalized members.
        for (std::size_t k = 0; k < s; ++k) {
            std::vector<double> sum(d, 0.0);
            for (std::size_t i = 0; i < r; ++i) {
                if (out.labels[i] != k) continue;
                for (std::size_t e = 0; e < d; ++e) sum[e] += unit[i][e];
            }
            const double norm = vector_norm(sum);
            if (norm < 1e-12) continue;  // members cancel out; keep the previous centroid
            for (double& x : sum) x /= norm;
            out.centroids.set_row(k, sum);
        }

        double obj = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            double cs = 0.0;
            for (std::size_t e = 0; e < d; ++e) cs += unit[i][e] * out.centroids(out.labels[i], e);
            obj += 1.0 - cs;
        }
        out.objective_history.push_back(obj);

        double movement = 0.0;
        for (std::size_t k = 0; k < s; ++k) {
            double m2 = 0.0;
            for (std::size_t e = 0; e < d; ++e) {
                const double diff = out.centroids(k, e) - prev_centroids[k][e];
                m2 += diff * diff;
            }
            movement = std::max(movement, std::sqrt(m2));
        }
        if (movement < tol) break;
    }
    return out;
}

}  // namespace detail

// Seeded k-means on the unit sphere: assignment maximizes cosine similarity,
// centroids are renormalized means of the unit-normalized members, and empty
// clusters are reseeded with the token farthest from its own centroid. Runs a
// fixed number of k-means++ restarts off the one rng stream and keeps the
// best objective, so a fixed seed still yields bit-identical results.
inline ClusterAssignment spherical_kmeans(const Matrix& tokens, std::size_t c, Rng& rng,
                                          std::size_t max_iter, double tol) {
    constexpr std::size_t kRestarts = 8;
    const std::size_t r = tokens.rows();
    const std::size_t d = tokens.cols();
    if (r == 0) throw ValueError("spherical_kmeans: no tokens");
    if (c == 0) throw ValueError("spherical_kmeans: cluster count must be >= 1");

    std::vector<std::vector<double>> unit(r);
    for (std::size_t i = 0; i < r; ++i) unit[i] = detail::unit_row(tokens, i);

    if (r <= c) {
        ClusterAssignment out;
        out.n_clusters = r;
        out.labels.resize(r);
        out.centroids = Matrix(r, d);
        double obj = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            out.labels[i] = i;
            out.centroids.set_row(i, unit[i]);
            obj += 1.0 - dot(unit[i], unit[i]);
        }
        out.objective_history.push_back(obj);
        return out;
    }

    ClusterAssignment best;
    for (std::size_t attempt = 0; attempt < kRestarts; ++attempt) {
        ClusterAssignment run = detail::skmeans_once(unit, c, d, rng, max_iter, tol);
        if (attempt == 0 || run.objective_history.back() < best.objective_history.back())
            best = std::move(run);
    }
    detail::canonicalize_clusters(best, d);
    return best;
}

// Merged token per cluster: the importance-weighted sum of its members. With
// `normalize` the sum is divided by the total member importance (unweighted
// mean when that total is below 1e-12).
inline Matrix merge_clusters(const Matrix& tokens, const std::vector<std::size_t>& redundant,
                             const ClusterAssignment& assignment, const ImportanceScores& ips,
                             bool normalize) {
    if (assignment.labels.size() != redundant.size())
        throw ShapeError("merge_clusters: assignment does not cover the redundant tokens");
    const std::size_t s = assignment.n_clusters;
    const std::size_t d = tokens.cols();
    Matrix merged(s, d);
    std::vector<double> weight_sums(s, 0.0);
    std::vector<std::size_t> counts(s, 0);
    for (std::size_t p = 0; p < redundant.size(); ++p) {
        const std::size_t token_idx = redundant[p];
        const std::size_t cluster = assignment.labels[p];
        const double w = ips.values[token_idx];
        for (std::size_t e = 0; e < d; ++e) merged(cluster, e) += w * tokens(token_idx, e);
        weight_sums[cluster] += w;
        ++counts[cluster];
    }
    if (normalize) {
        for (std::size_t k = 0; k < s; ++k) {
            if (weight_sums[k] < 1e-12) {
                // Degenerate weights: fall back to the unweighted member mean.
                for (std::size_t e = 0; e < d; ++e) merged(k, e) = 0.0;
                for (std::size_t p = 0; p < redundant.size(); ++p) {
                    if (assignment.labels[p] != k) continue;
                    for (std::size_t e = 0; e < d; ++e) merged(k, e) += tokens(redundant[p], e);
                }
                for (std::size_t e = 0; e < d; ++e) merged(k, e) /= static_cast<double>(counts[k]);
            } else {
                for (std::size_t e = 0; e < d; ++e) merged(k, e) /= weight_sums[k];
            }
        }
    }
    return merged;
}

// One compression stage on an encoder hidden state whose row 0 is the class
// token. Output: class token, then the k primary rows verbatim in ascending
// original order, then one merged row per cluster.
inline Matrix compress(const Matrix& z_prime, const Matrix& a_w, std::size_t k,
                       std::size_t clusters, const VmtcConfig& cfg, Rng& rng) {
    if (z_prime.rows() == 0) throw ShapeError("compress: empty input");
    if (a_w.rows() != z_prime.rows() || a_w.cols() != z_prime.rows())
        throw ShapeError("compress: attention matrix must match token count");
    const std::size_t n = z_prime.rows() - 1;
    if (k > n) throw ValueError("compress: k exceeds patch count");

    const ImportanceScores ips = importance_scores(a_w, cfg.cls_as_key);
    const TokenPartition part = partition_tokens(ips, k);
    const std::size_t n_redundant = n - k;
    const std::size_t s = std::min(clusters, n_redundant);

    Matrix out(1 + k + s, z_prime.cols());
    out.set_row(0, z_prime.row(0));
    for (std::size_t i = 0; i < k; ++i) out.set_row(1 + i, z_prime.row(part.primary[i] + 1));
    if (s == 0) return out;

    // Cluster the redundant hidden-state rows (offset by the class token row).
    Matrix redundant_tokens(n_redundant, z_prime.cols());
    for (std::size_t p = 0; p < n_redundant; ++p)
        redundant_tokens.set_row(p, z_prime.row(part.redundant[p] + 1));
    const ClusterAssignment assignment =
        spherical_kmeans(redundant_tokens, s, rng, cfg.kmeans.max_iter, cfg.kmeans.tol);

    // Merge in patch-index space: weight by each member's own importance.
    ImportanceScores local;
    local.values.resize(n_redundant);
    for (std::size_t p = 0; p < n_redundant; ++p) local.values[p] = ips.values[part.redundant[p]];
    std::vector<std::size_t> positions(n_redundant);
    for (std::size_t p = 0; p < n_redundant; ++p) positions[p] = p;
    const Matrix merged =
        merge_clusters(redundant_tokens, positions, assignment, local, cfg.normalize_merge);
    for (std::size_t m = 0; m < assignment.n_clusters; ++m)
        out.set_row(1 + k + m, merged.row(m));
    return out;
}

// Patch-token counts and per-stage keep/cluster splits realizing a total keep
// ratio across `num_stages` stages with a uniform per-stage ratio.
struct StageCounts {
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    std::size_t keep = 0;      // primary tokens retained verbatim
    std::size_t clusters = 0;  // merged rows appended after them
};

struct StageSchedule {
    std::vector<StageCounts> stages;
};

inline StageSchedule schedule_stages(std::size_t n0, const VmtcConfig& cfg) {
    if (cfg.target_keep_ratio <= 0.0 || cfg.target_keep_ratio > 1.0)
        throw ScheduleError("schedule_stages: keep ratio must be in (0, 1]");
    if (cfg.num_stages == 0) throw ScheduleError("schedule_stages: need at least one stage");
    const std::size_t S = cfg.num_stages;
    const double per_stage = std::pow(cfg.target_keep_ratio, 1.0 / static_cast<double>(S));
    const auto target =
        static_cast<long long>(std::llround(static_cast<double>(n0) * cfg.target_keep_ratio));

    StageSchedule sched;
    std::size_t prev = n0;
    for (std::size_t t = 0; t < S; ++t) {
        long long next = (t + 1 == S)
                             ? target
                             : std::llround(static_cast<double>(prev) * per_stage);
        if (next <= 0) throw ScheduleError("schedule_stages: stage " + std::to_string(t) +
                                           " would leave no patch tokens");
        const auto n_out = static_cast<std::size_t>(next);
        if (n_out > prev)
            throw ScheduleError("schedule_stages: stage " + std::to_string(t) +
                                " would grow the token count");
        StageCounts sc;
        sc.n_in = prev;
        sc.n_out = n_out;
        if (n_out == prev) {
            // Identity-sized stage: compression skipped.
            sc.keep = n_out;
            sc.clusters = 0;
        } else {
            sc.clusters = std::min(cfg.clusters_per_stage, n_out);
            sc.keep = n_out - sc.clusters;
        }
        sched.stages.push_back(sc);
        prev = n_out;
    }
    return sched;
}

// Block-mean pooling of a row-major g x g token grid down to (g/f) x (g/f).
inline Matrix spatial_downsample(const Matrix& tokens, std::size_t grid_side, std::size_t factor) {
    if (factor == 0) throw ValueError("spatial_downsample: factor must be >= 1");
    if (tokens.rows() != grid_side * grid_side)
        throw ShapeError("spatial_downsample: token count must equal grid_side^2");
    if (grid_side % factor != 0)
        throw ValueError("spatial_downsample: grid side " + std::to_string(grid_side) +
                         " not divisible by factor " + std::to_string(factor));
    const std::size_t out_side = grid_side / factor;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    Matrix out(out_side * out_side, tokens.cols());
    for (std::size_t br = 0; br < out_side; ++br) {
        for (std::size_t bc = 0; bc < out_side; ++bc) {
            const std::size_t o = br * out_side + bc;
            for (std::size_t e = 0; e < tokens.cols(); ++e) {
                double sum = 0.0;
                for (std::size_t r = 0; r < factor; ++r)
                    for (std::size_t c = 0; c < factor; ++c)
                        sum += tokens((br * factor + r) * grid_side + (bc * factor + c), e);
                out(o, e) = sum * inv;
            }
        }
    }
    return out;
}

// Baseline: keep the top round(keep_ratio * n) patch tokens by importance
// after the final encoder block; no clustering, no merging, class token
// dropped. Kept rows stay in ascending original order.
inline Matrix last_layer_prune(const Matrix& z_with_cls, const Matrix& a_w, double keep_ratio,
                               bool cls_as_key = false) {
    if (z_with_cls.rows() == 0) throw ShapeError("last_layer_prune: empty input");
    const std::size_t n = z_with_cls.rows() - 1;
    const ImportanceScores ips = importance_scores(a_w, cls_as_key);
    const auto k = static_cast<std::size_t>(std::llround(keep_ratio * static_cast<double>(n)));
    const std::vector<std::size_t> kept = top_rank_indices(ips.values, k);
    Matrix out(k, z_with_cls.cols());
    for (std::size_t i = 0; i < k; ++i) out.set_row(i, z_with_cls.row(kept[i] + 1));
    return out;
}

}  // namespace tinymm
