#pragma once

// Multi-head self-attention and transformer blocks. Blocks are split into an
// attention half and an MLP half so callers can run token compression on the
// intermediate hidden state between the two.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tinymm/error.hpp"
#include "tinymm/linalg.hpp"

namespace tinymm {

struct AttentionParams {
    Matrix w_q, w_k, w_v, w_o;  // each d_model x d_model
    std::size_t n_heads = 1;
};

struct BlockParams {
    AttentionParams attn;
    Matrix mlp_in;   // d_model x d_ff
    Matrix mlp_out;  // d_ff x d_model
    std::vector<double> ln1_scale, ln1_shift;
    std::vector<double> ln2_scale, ln2_shift;
};

// Attention weights captured from one attention call. `averaged_weights` is
// the entrywise mean of the per-head post-softmax weights; `averaged_scores`
// is the mean of the pre-softmax scaled scores QK^T/sqrt(d_head) without the
// mask, kept for the score-basis ablation.
struct AttentionRecord {
    std::vector<Matrix> per_head_weights;
    Matrix averaged_weights;
    Matrix averaged_scores;
};

// Zeros on and below the diagonal, the mask sentinel above it.
inline MaskMatrix causal_mask(std::size_t seq_len) {
    if (seq_len == 0) throw ValueError("causal_mask: seq_len must be >= 1");
    MaskMatrix m(seq_len, seq_len);
    for (std::size_t i = 0; i < seq_len; ++i)
        for (std::size_t j = i + 1; j < seq_len; ++j) m.mask(i, j);
    return m;
}

// Per-row normalization with population variance and epsilon 1e-5.
inline Matrix layer_norm(const Matrix& x, const std::vector<double>& scale,
                         const std::vector<double>& shift) {
    if (scale.size() != x.cols() || shift.size() != x.cols())
        throw ShapeError("layer_norm: scale/shift length must equal cols");
    Matrix out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) mean += x(i, j);
        mean /= n;
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double d = x(i, j) - mean;
            var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < x.cols(); ++j)
            out(i, j) = (x(i, j) - mean) * inv * scale[j] + shift[j];
    }
    return out;
}

namespace detail {

inline void check_attention_shapes(const Matrix& x, const AttentionParams& p,
                                   const MaskMatrix& mask) {
    const std::size_t d = x.cols();
    if (p.w_q.rows() != d || p.w_q.cols() != d || p.w_k.rows() != d || p.w_k.cols() != d ||
        p.w_v.rows() != d || p.w_v.cols() != d || p.w_o.rows() != d || p.w_o.cols() != d)
        throw ShapeError("attention: projection shapes must be d_model x d_model");
    if (mask.rows() != x.rows() || mask.cols() != x.rows())
        throw ShapeError("attention: mask must be seq x seq");
    if (p.n_heads == 0 || d % p.n_heads != 0)
        throw ValueError("attention: d_model must be divisible by n_heads");
}

}  // namespace detail

// Scaled dot-product attention per head; heads concatenated in ascending
// index order, then projected by w_o.
inline std::pair<Matrix, AttentionRecord> multi_head_self_attention(const Matrix& x,
                                                                    const AttentionParams& params,
                                                                    const MaskMatrix& mask) {
    detail::check_attention_shapes(x, params, mask);
    const std::size_t seq = x.rows();
    const std::size_t d_model = x.cols();
    const std::size_t n_heads = params.n_heads;
    const std::size_t d_head = d_model / n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d_head));

    const Matrix q = matmul(x, params.w_q);
    const Matrix k = matmul(x, params.w_k);
    const Matrix v = matmul(x, params.w_v);

    AttentionRecord record;
    record.per_head_weights.reserve(n_heads);
    record.averaged_weights = Matrix(seq, seq);
    record.averaged_scores = Matrix(seq, seq);

    Matrix concat(seq, d_model);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * d_head;
        Matrix scores(seq, seq);
        for (std::size_t i = 0; i < seq; ++i) {
            for (std::size_t j = 0; j < seq; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < d_head; ++c) s += q(i, off + c) * k(j, off + c);
                scores(i, j) = s * inv_sqrt_dh;
            }
        }
        Matrix weights = softmax_rows(scores, mask);
        for (std::size_t i = 0; i < seq; ++i) {
            for (std::size_t c = 0; c < d_head; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < seq; ++j) s += weights(i, j) * v(j, off + c);
                concat(i, off + c) = s;
            }
        }
        for (std::size_t i = 0; i < seq; ++i) {
            for (std::size_t j = 0; j < seq; ++j) {
                record.averaged_weights(i, j) += weights(i, j);
                record.averaged_scores(i, j) += scores(i, j);
            }
        }
        record.per_head_weights.push_back(std::move(weights));
    }
    const double inv_heads = 1.0 / static_cast<double>(n_heads);
    for (std::size_t i = 0; i < seq; ++i) {
        for (std::size_t j = 0; j < seq; ++j) {
            record.averaged_weights(i, j) *= inv_heads;
            record.averaged_scores(i, j) *= inv_heads;
        }
    }
    return {matmul(concat, params.w_o), std::move(record)};
}

// Attention half of a block: x + MSA(LN1(x)), or x + MSA(x) in literal mode.
inline std::pair<Matrix, AttentionRecord> attention_half(const Matrix& x,
                                                         const BlockParams& params,
                                                         const MaskMatrix& mask,
                                                         bool literal_mode) {
    Matrix normed;
    if (!literal_mode) normed = layer_norm(x, params.ln1_scale, params.ln1_shift);
    auto [attn_out, record] = multi_head_self_attention(literal_mode ? x : normed, params.attn, mask);
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = attn_out(i, j) + x(i, j);
    return {std::move(out), std::move(record)};
}

// MLP half of a block: z + MLP(LN2(z)), or z + MLP(z) in literal mode, with
// MLP(h) = gelu(h * mlp_in) * mlp_out.
inline Matrix mlp_half(const Matrix& z, const BlockParams& params, bool literal_mode) {
    const Matrix h = literal_mode ? z : layer_norm(z, params.ln2_scale, params.ln2_shift);
    const Matrix mlp = matmul(gelu(matmul(h, params.mlp_in)), params.mlp_out);
    Matrix out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j < z.cols(); ++j) out(i, j) = mlp(i, j) + z(i, j);
    return out;
}

inline std::pair<Matrix, AttentionRecord> transformer_block(const Matrix& x,
                                                            const BlockParams& params,
                                                            const MaskMatrix& mask,
                                                            bool literal_mode) {
    auto [z, record] = attention_half(x, params, mask, literal_mode);
    return {mlp_half(z, params, literal_mode), std::move(record)};
}

}  // namespace tinymm
