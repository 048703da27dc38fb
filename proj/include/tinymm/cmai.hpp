#pragma once

// Cross-modality attention inhibition. From the head-averaged attention of a
// decoder layer, each text row's focus on every image column is scored by
// combining its direct text-to-image attention with the attention of the text
// tokens it attends to. The lowest-focus image columns per text row are then
// masked out and the layer is recomputed under the augmented mask.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tinymm/attention.hpp"
#include "tinymm/error.hpp"
#include "tinymm/linalg.hpp"

namespace tinymm {

// Image tokens occupy positions [0, n_image); text tokens follow.
struct SequenceLayout {
    std::size_t n_image = 0;
    std::size_t n_text = 0;
};

// Text-to-image focus: rows are text tokens, columns image tokens.
struct FocusScore {
    Matrix f;
};

enum class FocusMode {
    kNeighborhood,  // direct attention plus neighborhood-aggregated attention
    kTia,           // direct text-to-image attention only
    kSum,           // causal prefix sum of text-to-image attention
    kDiscounted,    // distance-discounted causal prefix sum
};

enum class FocusBasis { kWeights, kScores };

struct InhibitionSchedule {
    std::vector<double> gamma;  // one ratio per decoder layer, each in [0, 1)
};

// Outcome of inhibiting one layer: which image columns each text row masks,
// the augmented mask, and the image-attention mass of the text rows measured
// on the pre-inhibition weights (before and after removing the inhibited
// entries, prior to any renormalization).
struct InhibitionResult {
    std::vector<std::vector<std::size_t>> positions;  // per text row, sorted ascending
    MaskMatrix augmented_mask;
    double image_mass_before = 0.0;
    double image_mass_after = 0.0;
};

struct SplitAttention {
    Matrix text_to_image;  // m x n
    Matrix text_to_text;   // m x m
};

inline SplitAttention split_attention(const Matrix& a_s, const SequenceLayout& layout) {
    const std::size_t n = layout.n_image;
    const std::size_t m = layout.n_text;
    if (a_s.rows() != n + m || a_s.cols() != n + m)
        throw ShapeError("split_attention: matrix side must equal n_image + n_text");
    SplitAttention out;
    out.text_to_image = Matrix(m, n);
    out.text_to_text = Matrix(m, m);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t k = 0; k < n; ++k) out.text_to_image(j, k) = a_s(n + j, k);
        for (std::size_t k = 0; k < m; ++k) out.text_to_text(j, k) = a_s(n + j, n + k);
    }
    return out;
}

// Strictly-lower-triangular copy: each text token's attention to the earlier
// text tokens only, itself excluded.
inline Matrix neighborhood_mask(const Matrix& a_t2t) {
    if (a_t2t.rows() != a_t2t.cols()) throw ShapeError("neighborhood_mask: input must be square");
    Matrix out(a_t2t.rows(), a_t2t.cols());
    for (std::size_t j = 0; j < a_t2t.rows(); ++j)
        for (std::size_t k = 0; k < j; ++k) out(j, k) = a_t2t(j, k);
    return out;
}

// Aggregate image attention through the neighborhood: a_t2n * a_t2i.
inline Matrix neighborhood_focus(const Matrix& a_t2n, const Matrix& a_t2i) {
    return matmul(a_t2n, a_t2i);
}

inline FocusScore focus_score(const Matrix& a_n2i, const Matrix& a_t2i) {
    if (!a_n2i.same_shape(a_t2i)) throw ShapeError("focus_score: shape mismatch");
    FocusScore fs;
    fs.f = Matrix(a_n2i.rows(), a_n2i.cols());
    for (std::size_t j = 0; j < a_n2i.rows(); ++j)
        for (std::size_t k = 0; k < a_n2i.cols(); ++k) fs.f(j, k) = a_n2i(j, k) + a_t2i(j, k);
    return fs;
}

// Ablation focus scores: plain text-to-image attention, its causal prefix
// sum, or a distance-discounted prefix sum.
inline FocusScore focus_score_variant(const Matrix& a_t2i, FocusMode mode, double discount) {
    FocusScore fs;
    const std::size_t m = a_t2i.rows();
    const std::size_t n = a_t2i.cols();
    fs.f = Matrix(m, n);
    switch (mode) {
        case FocusMode::kTia:
            fs.f = a_t2i;
            break;
        case FocusMode::kSum:
            for (std::size_t j = 0; j < m; ++j)
                for (std::size_t h = 0; h <= j; ++h)
                    for (std::size_t k = 0; k < n; ++k) fs.f(j, k) += a_t2i(h, k);
            break;
        case FocusMode::kDiscounted: {
            if (discount <= 0.0 || discount >= 1.0)
                throw ValueError("focus_score_variant: discount must be in (0, 1)");
            for (std::size_t j = 0; j < m; ++j) {
                for (std::size_t h = 0; h <= j; ++h) {
                    const double w = std::pow(discount, static_cast<double>(j - h));
                    for (std::size_t k = 0; k < n; ++k) fs.f(j, k) += w * a_t2i(h, k);
                }
            }
            break;
        }
        default:
            throw ValueError("focus_score_variant: unknown mode");
    }
    return fs;
}

// Focus score for a layer under the configured mode.
inline FocusScore compute_focus(const Matrix& a_t2i, const Matrix& a_t2t, FocusMode mode,
                                double discount) {
    if (mode == FocusMode::kNeighborhood)
        return focus_score(neighborhood_focus(neighborhood_mask(a_t2t), a_t2i), a_t2i);
    return focus_score_variant(a_t2i, mode, discount);
}

// Per text row: the exactly min(floor(gamma * n), n - 1) lowest-focus image
// columns. At least one image column always survives.
inline std::vector<std::vector<std::size_t>> inhibition_positions(const FocusScore& focus,
                                                                  double gamma) {
    if (gamma < 0.0 || gamma >= 1.0)
        throw ValueError("inhibition_positions: gamma must be in [0, 1)");
    const std::size_t m = focus.f.rows();
    const std::size_t n = focus.f.cols();
    std::vector<std::vector<std::size_t>> positions(m);
    if (n == 0) return positions;
    const auto quota = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(n)));
    const std::size_t q = std::min(quota, n - 1);
    if (q == 0) return positions;
    for (std::size_t j = 0; j < m; ++j) positions[j] = lowest_rank_indices(focus.f.row(j), q);
    return positions;
}

// Write the mask sentinel at every inhibited (text row, image column) pair;
// every other entry is untouched.
inline MaskMatrix apply_inhibition(const MaskMatrix& mask,
                                   const std::vector<std::vector<std::size_t>>& positions,
                                   const SequenceLayout& layout) {
    const std::size_t side = layout.n_image + layout.n_text;
    if (mask.rows() != side || mask.cols() != side)
        throw ShapeError("apply_inhibition: mask side must equal n_image + n_text");
    if (positions.size() != layout.n_text)
        throw ShapeError("apply_inhibition: one position set per text row required");
    MaskMatrix out = mask;
    for (std::size_t row = 0; row < positions.size(); ++row)
        for (std::size_t col : positions[row]) out.mask(layout.n_image + row, col);
    return out;
}

// Linearly increasing per-layer inhibition ratio ending at gamma_max.
inline InhibitionSchedule linear_gamma_schedule(std::size_t depth, double gamma_max) {
    if (depth == 0) throw ValueError("linear_gamma_schedule: depth must be >= 1");
    if (gamma_max < 0.0 || gamma_max >= 1.0)
        throw ValueError("linear_gamma_schedule: gamma_max must be in [0, 1)");
    InhibitionSchedule sched;
    sched.gamma.resize(depth);
    if (depth == 1) {
        sched.gamma[0] = gamma_max;
        return sched;
    }
    for (std::size_t l = 0; l < depth; ++l)
        sched.gamma[l] = gamma_max * (static_cast<double>(l) / static_cast<double>(depth - 1));
    return sched;
}

struct CmaiLayerOutput {
    Matrix hidden;
    InhibitionResult inhibition;
    AttentionRecord record;  // from the recomputation pass
};

// One decoder layer with inhibition. Pass 1 runs attention under the base
// mask to obtain the focus basis; pass 2 recomputes the whole block under the
// augmented mask and its output is returned. The mask is derived fresh here
// and is not carried to other layers.
inline CmaiLayerOutput cmai_layer(const Matrix& x, const BlockParams& params,
                                  const MaskMatrix& base_mask, const SequenceLayout& layout,
                                  double gamma, FocusMode mode, double discount,
                                  FocusBasis focus_basis, bool literal_mode) {
    if (x.rows() != layout.n_image + layout.n_text)
        throw ShapeError("cmai_layer: sequence length must equal n_image + n_text");

    auto [pass1, record1] = attention_half(x, params, base_mask, literal_mode);

    const Matrix& basis =
        focus_basis == FocusBasis::kWeights ? record1.averaged_weights : record1.averaged_scores;
    const SplitAttention split = split_attention(basis, layout);
    const FocusScore focus = compute_focus(split.text_to_image, split.text_to_text, mode, discount);

    InhibitionResult result;
    result.positions = inhibition_positions(focus, gamma);
    result.augmented_mask = apply_inhibition(base_mask, result.positions, layout);

    // Image-attention mass of the text rows on the pass-1 weights, before and
    // after dropping the inhibited entries (no renormalization).
    const SplitAttention weight_split = focus_basis == FocusBasis::kWeights
                                            ? split
                                            : split_attention(record1.averaged_weights, layout);
    double removed = 0.0;
    for (std::size_t j = 0; j < layout.n_text; ++j) {
        for (std::size_t k = 0; k < layout.n_image; ++k)
            result.image_mass_before += weight_split.text_to_image(j, k);
        for (std::size_t k : result.positions[j]) removed += weight_split.text_to_image(j, k);
    }
    result.image_mass_after = result.image_mass_before - removed;

    auto [hidden, record2] = transformer_block(x, params, result.augmented_mask, literal_mode);
    return {std::move(hidden), std::move(result), std::move(record2)};
}

}  // namespace tinymm
