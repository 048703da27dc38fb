#pragma once

// Deterministic dense linear algebra on 64-bit floats. Every reduction uses a
// fixed left-to-right summation order so that identical inputs produce
// bit-identical outputs on every platform.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "tinymm/error.hpp"

namespace tinymm {

// Additive-mask sentinel. A finite stand-in for -infinity: mask arithmetic
// stays NaN-free, and softmax maps masked positions to exactly 0 through an
// explicit branch rather than through exp underflow.
inline constexpr double kNegInf = -1e30;

// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        Matrix m(rows.size(), rows.size() == 0 ? 0 : rows.begin()->size());
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != m.cols_) throw ShapeError("from_rows: ragged row lengths");
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    std::vector<double> row(std::size_t i) const {
        return {data_.begin() + static_cast<std::ptrdiff_t>(i * cols_),
                data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols_)};
    }

    void set_row(std::size_t i, const std::vector<double>& values) {
        std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
    }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Additive attention mask. Entries are only ever 0.0 (visible) or kNegInf
// (masked); square when used as a self-attention mask.
class MaskMatrix {
public:
    MaskMatrix() = default;
    MaskMatrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    bool masked(std::size_t i, std::size_t j) const { return data_[i * cols_ + j] == kNegInf; }

    void mask(std::size_t i, std::size_t j) { data_[i * cols_ + j] = kNegInf; }
    void unmask(std::size_t i, std::size_t j) { data_[i * cols_ + j] = 0.0; }

    friend bool operator==(const MaskMatrix& a, const MaskMatrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Counter-based deterministic generator (splitmix64). The state advances by a
// fixed odd constant per draw and the output is a bijective mix of the state,
// so identical seeds yield identical draws on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, bound).
    std::uint64_t next_below(std::uint64_t bound) { return next_u64() % bound; }

    // Standard normal via Box-Muller; consumes exactly two draws.
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::uint64_t state_;
};

// c[i][j] = sum_k a[i][k] * b[k][j], k ascending.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

// Row-wise masked softmax. Masked positions produce exactly 0; every row must
// contain at least one unmasked entry.
inline Matrix softmax_rows(const Matrix& scores, const MaskMatrix& mask) {
    if (scores.rows() != mask.rows() || scores.cols() != mask.cols())
        throw ShapeError("softmax_rows: scores and mask shapes differ");
    Matrix out(scores.rows(), scores.cols());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < scores.cols(); ++j)
            if (!mask.masked(i, j)) row_max = std::max(row_max, scores(i, j));
        if (row_max == -std::numeric_limits<double>::infinity())
            throw ValueError("softmax_rows: fully masked row " + std::to_string(i));
        double denom = 0.0;
        for (std::size_t j = 0; j < scores.cols(); ++j) {
            if (mask.masked(i, j)) continue;
            const double e = std::exp(scores(i, j) - row_max);
            out(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < scores.cols(); ++j)
            if (!mask.masked(i, j)) out(i, j) /= denom;
    }
    return out;
}

namespace detail {

inline void check_rank_count(std::size_t count, std::size_t n) {
    if (count > n)
        throw ValueError("rank selection: count " + std::to_string(count) +
                         " exceeds length " + std::to_string(n));
}

}  // namespace detail

// Indices of the `count` smallest values; ties broken by ascending index,
// result sorted ascending.
inline std::vector<std::size_t> lowest_rank_indices(const std::vector<double>& values,
                                                    std::size_t count) {
    detail::check_rank_count(count, values.size());
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (values[a] != values[b]) return values[a] < values[b];
        return a < b;
    });
    order.resize(count);
    std::sort(order.begin(), order.end());
    return order;
}

// Indices of the `count` largest values; ties broken by ascending index,
// result sorted ascending.
inline std::vector<std::size_t> top_rank_indices(const std::vector<double>& values,
                                                 std::size_t count) {
    detail::check_rank_count(count, values.size());
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (values[a] != values[b]) return values[a] > values[b];
        return a < b;
    });
    order.resize(count);
    std::sort(order.begin(), order.end());
    return order;
}

inline double vector_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dot(const std::vector<double>& u, const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

// u.v / (|u||v|), clamped into [-1, 1].
inline double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw ShapeError("cosine_similarity: length mismatch");
    const double nu = vector_norm(u);
    const double nv = vector_norm(v);
    if (nu == 0.0 || nv == 0.0) throw ValueError("cosine_similarity: zero-norm vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

// Exact Gaussian-error-function GELU, x * Phi(x). Not the tanh approximation.
inline double gelu_scalar(double x) {
    return x * 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
}

inline Matrix gelu(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = gelu_scalar(x(i, j));
    return out;
}

// N(0, std^2) fill in row-major draw order.
inline Matrix gaussian_init(Rng& rng, std::size_t rows, std::size_t cols, double std_dev) {
    if (std_dev <= 0.0) throw ValueError("gaussian_init: std must be positive");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = std_dev * rng.next_gaussian();
    return m;
}

inline std::vector<double> gaussian_init_vector(Rng& rng, std::size_t n, double std_dev) {
    if (std_dev <= 0.0) throw ValueError("gaussian_init: std must be positive");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std_dev * rng.next_gaussian();
    return v;
}

}  // namespace tinymm
