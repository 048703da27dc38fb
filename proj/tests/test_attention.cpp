#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "tinymm/attention.hpp"
#include "tinymm/oracle.hpp"

using namespace tinymm;

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.next_gaussian();
    return m;
}

AttentionParams random_params(Rng& rng, std::size_t d_model, std::size_t heads) {
    AttentionParams p;
    p.n_heads = heads;
    p.w_q = random_matrix(rng, d_model, d_model);
    p.w_k = random_matrix(rng, d_model, d_model);
    p.w_v = random_matrix(rng, d_model, d_model);
    p.w_o = random_matrix(rng, d_model, d_model);
    return p;
}

BlockParams random_block(Rng& rng, std::size_t d_model, std::size_t d_ff, std::size_t heads) {
    BlockParams b;
    b.attn = random_params(rng, d_model, heads);
    b.mlp_in = random_matrix(rng, d_model, d_ff);
    b.mlp_out = random_matrix(rng, d_ff, d_model);
    b.ln1_scale.assign(d_model, 1.0);
    b.ln1_shift.assign(d_model, 0.0);
    b.ln2_scale.assign(d_model, 1.0);
    b.ln2_shift.assign(d_model, 0.0);
    for (std::size_t j = 0; j < d_model; ++j) {
        b.ln1_scale[j] += 0.1 * rng.next_gaussian();
        b.ln2_scale[j] += 0.1 * rng.next_gaussian();
        b.ln1_shift[j] = 0.1 * rng.next_gaussian();
        b.ln2_shift[j] = 0.1 * rng.next_gaussian();
    }
    return b;
}

BlockParams zero_block(std::size_t d_model, std::size_t d_ff, std::size_t heads) {
    BlockParams b;
    b.attn.n_heads = heads;
    b.attn.w_q = Matrix(d_model, d_model);
    b.attn.w_k = Matrix(d_model, d_model);
    b.attn.w_v = Matrix(d_model, d_model);
    b.attn.w_o = Matrix(d_model, d_model);
    b.mlp_in = Matrix(d_model, d_ff);
    b.mlp_out = Matrix(d_ff, d_model);
    b.ln1_scale.assign(d_model, 1.0);
    b.ln1_shift.assign(d_model, 0.0);
    b.ln2_scale.assign(d_model, 1.0);
    b.ln2_shift.assign(d_model, 0.0);
    return b;
}

}  // namespace

TEST_CASE("causal mask shape and count") {
    const MaskMatrix one = causal_mask(1);
    CHECK_FALSE(one.masked(0, 0));

    const MaskMatrix three = causal_mask(3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(three.masked(i, j) == (j > i));

    const MaskMatrix five = causal_mask(5);
    std::size_t masked = 0;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) masked += five.masked(i, j) ? 1 : 0;
    CHECK(masked == 10);  // C(5, 2)

    CHECK_THROWS_AS(causal_mask(0), ValueError);
}

TEST_CASE("uniform attention averages the value rows") {
    // Zero query/key projections give flat scores; with identity value and
    // output projections every output row is the column mean of the input.
    AttentionParams p;
    p.n_heads = 1;
    p.w_q = Matrix(4, 4);
    p.w_k = Matrix(4, 4);
    p.w_v = Matrix::identity(4);
    p.w_o = Matrix::identity(4);
    Rng rng(3);
    const Matrix x = random_matrix(rng, 3, 4);
    const auto [out, record] = multi_head_self_attention(x, p, MaskMatrix(3, 3));
    for (std::size_t j = 0; j < 4; ++j) {
        const double mean = (x(0, j) + x(1, j) + x(2, j)) / 3.0;
        for (std::size_t i = 0; i < 3; ++i) CHECK(out(i, j) == Catch::Approx(mean).margin(1e-12));
    }
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(record.averaged_weights(i, j) == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("causal first row attends only to itself") {
    Rng rng(7);
    const Matrix x = random_matrix(rng, 4, 8);
    const AttentionParams p = random_params(rng, 8, 2);
    const auto [out, record] = multi_head_self_attention(x, p, causal_mask(4));
    CHECK(record.averaged_weights(0, 0) == 1.0);
    for (std::size_t j = 1; j < 4; ++j) CHECK(record.averaged_weights(0, j) == 0.0);
}

TEST_CASE("attention matches the naive oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t heads = 1 + rng.next_below(4);
        const std::size_t d_model = heads * (1 + rng.next_below(4));
        const std::size_t seq = 2 + rng.next_below(7);
        const Matrix x = random_matrix(rng, seq, d_model);
        const AttentionParams p = random_params(rng, d_model, heads);
        const MaskMatrix mask = trial % 2 ? causal_mask(seq) : MaskMatrix(seq, seq);
        const auto [got, record] = multi_head_self_attention(x, p, mask);
        const Matrix want = oracle::naive_attention(x, p, mask);
        for (std::size_t i = 0; i < seq; ++i)
            for (std::size_t j = 0; j < d_model; ++j)
                CHECK(std::abs(got(i, j) - want(i, j)) <= 1e-9);
    }
}

TEST_CASE("attention matches an externally computed reference") {
    // Dyadic-rational inputs reproduced bit-exactly in an independent numpy
    // implementation; outputs frozen from it.
    const std::size_t seq = 3, d_model = 4;
    Matrix x(seq, d_model);
    for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = 0; j < d_model; ++j)
            x(i, j) = (static_cast<double>((i * d_model + j) % 7) - 3.0) / 4.0;
    auto weight = [&](std::size_t off) {
        Matrix w(d_model, d_model);
        for (std::size_t a = 0; a < d_model; ++a)
            for (std::size_t b = 0; b < d_model; ++b)
                w(a, b) = (static_cast<double>((a * d_model + b + off) % 5) - 2.0) / 8.0;
        return w;
    };
    AttentionParams p;
    p.n_heads = 2;
    p.w_q = weight(0);
    p.w_k = weight(1);
    p.w_v = weight(2);
    p.w_o = weight(3);

    const auto [out, record] = multi_head_self_attention(x, p, causal_mask(seq));
    const double want[3][4] = {
        {0.0390625, 0.01953125, -0.078125, -0.05859375},
        {-0.04065553084552616, -0.04683049440885306, 0.04471148348726408,
         0.01898503943745584},
        {-0.01931463305526657, -0.02947804967455103, 0.00065982426523451,
         0.00559829478725372},
    };
    for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = 0; j < d_model; ++j)
            CHECK(out(i, j) == Catch::Approx(want[i][j]).margin(1e-12));
}

TEST_CASE("naive attention oracle sanity cases") {
    // Zero query/key with identity value/output: every row is the column mean.
    AttentionParams p;
    p.n_heads = 1;
    p.w_q = Matrix(4, 4);
    p.w_k = Matrix(4, 4);
    p.w_v = Matrix::identity(4);
    p.w_o = Matrix::identity(4);
    Rng rng(37);
    const Matrix x = random_matrix(rng, 3, 4);
    const Matrix out = oracle::naive_attention(x, p, MaskMatrix(3, 3));
    for (std::size_t j = 0; j < 4; ++j) {
        const double mean = (x(0, j) + x(1, j) + x(2, j)) / 3.0;
        for (std::size_t i = 0; i < 3; ++i) CHECK(out(i, j) == Catch::Approx(mean).margin(1e-12));
    }

    // Causal row 0 sees only itself, so its output is its own value row.
    const AttentionParams rp = random_params(rng, 4, 2);
    const Matrix y = random_matrix(rng, 4, 4);
    const Matrix causal = oracle::naive_attention(y, rp, causal_mask(4));
    const Matrix v = matmul(y, rp.w_v);
    Matrix row0(1, 4);
    row0.set_row(0, v.row(0));
    const Matrix want = matmul(row0, rp.w_o);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(causal(0, j) == Catch::Approx(want(0, j)).margin(1e-12));
}

TEST_CASE("attention record invariants") {
    Rng rng(19);
    const Matrix x = random_matrix(rng, 6, 8);
    const AttentionParams p = random_params(rng, 8, 4);
    const auto [out, record] = multi_head_self_attention(x, p, causal_mask(6));

    // Lower-triangular averaged weights under a causal mask.
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = i + 1; j < 6; ++j) CHECK(record.averaged_weights(i, j) == 0.0);

    // Per-head rows are probability distributions.
    for (const Matrix& w : record.per_head_weights)
        for (std::size_t i = 0; i < 6; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 6; ++j) sum += w(i, j);
            CHECK(sum == Catch::Approx(1.0).margin(1e-9));
        }

    // Head averaging is order-invariant: mean of any permutation is the mean.
    Matrix manual(6, 6);
    for (std::size_t h = p.n_heads; h-- > 0;)
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 6; ++j)
                manual(i, j) += record.per_head_weights[h](i, j) / 4.0;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            CHECK(manual(i, j) == Catch::Approx(record.averaged_weights(i, j)).margin(1e-12));
}

TEST_CASE("literal block with zero weights is the identity") {
    Rng rng(23);
    const Matrix x = random_matrix(rng, 5, 6);
    const BlockParams b = zero_block(6, 12, 2);
    const auto [out, record] = transformer_block(x, b, MaskMatrix(5, 5), /*literal=*/true);
    CHECK(out == x);  // bit-exact
}

TEST_CASE("default block with unit norm and zero weights is the identity") {
    Rng rng(29);
    const Matrix x = random_matrix(rng, 5, 6);
    const BlockParams b = zero_block(6, 12, 2);
    const auto [out, record] = transformer_block(x, b, MaskMatrix(5, 5), /*literal=*/false);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j)
            CHECK(out(i, j) == Catch::Approx(x(i, j)).margin(1e-12));
}

TEST_CASE("literal block matches a step-by-step transcription") {
    Rng rng(31);
    const std::size_t d = 8, ff = 16, seq = 5;
    const Matrix x = random_matrix(rng, seq, d);
    const BlockParams b = random_block(rng, d, ff, 2);
    const MaskMatrix mask = causal_mask(seq);
    const auto [got, record] = transformer_block(x, b, mask, /*literal=*/true);

    // Transcription: attention plus residual, then the GELU MLP plus residual.
    const Matrix attn = oracle::naive_attention(x, b.attn, mask);
    Matrix z_mid(seq, d);
    for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = 0; j < d; ++j) z_mid(i, j) = attn(i, j) + x(i, j);
    Matrix hidden = oracle::naive_matmul(z_mid, b.mlp_in);
    for (auto& v : hidden.data()) v = v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
    const Matrix mlp = oracle::naive_matmul(hidden, b.mlp_out);
    for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = 0; j < d; ++j)
            CHECK(got(i, j) == Catch::Approx(mlp(i, j) + z_mid(i, j)).margin(1e-9));
}

TEST_CASE("layer norm closed forms") {
    const std::vector<double> one{1.0, 1.0}, zero{0.0, 0.0};

    const Matrix constant = layer_norm(Matrix::from_rows({{3, 3}}), one, zero);
    CHECK(constant(0, 0) == Catch::Approx(0.0).margin(1e-12));

    const Matrix unit = layer_norm(Matrix::from_rows({{1, -1}}), one, zero);
    CHECK(unit(0, 0) == Catch::Approx(0.99999500003749969).margin(1e-12));
    CHECK(unit(0, 1) == Catch::Approx(-0.99999500003749969).margin(1e-12));

    const Matrix shifted = layer_norm(Matrix::from_rows({{2, 5}}), zero, {7.0, 7.0});
    CHECK(shifted(0, 0) == 7.0);
    CHECK(shifted(0, 1) == 7.0);
}
