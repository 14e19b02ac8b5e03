#include "psp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <omp.h>

#include "psp/error.hpp"

namespace psp {

namespace {

void check_matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul dimension mismatch: " + shape_to_string(a.shape()) + " . " +
                         shape_to_string(b.shape()));
}

void check_matmul_bt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw ShapeError("matmul_bt dimension mismatch: " + shape_to_string(a.shape()) + " . " +
                         shape_to_string(b.shape()) + "^T");
}

void check_blend(const Tensor& a, const Tensor& b, const Tensor& m) {
    if (a.shape() != b.shape() || a.rank() != 2)
        throw ShapeError("blend operands differ: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    if (m.size() != a.rows())
        throw ShapeError("blend weight length " + std::to_string(m.size()) + " != rows " +
                         std::to_string(a.rows()));
}

// out[j] = sum_k a[k] * b[k, j], k ascending.
void matmul_row(std::span<const float> a_row, const Tensor& b, std::span<float> out) {
    const std::size_t n = b.cols();
    std::fill(out.begin(), out.end(), 0.0f);
    const float* bp = b.data().data();
    for (std::size_t k = 0; k < a_row.size(); ++k) {
        const float aik = a_row[k];
        const float* brow = bp + k * n;
        for (std::size_t j = 0; j < n; ++j) out[j] += aik * brow[j];
    }
}

void matmul_bt_row(std::span<const float> a_row, const Tensor& b, std::span<float> out) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
        const auto brow = b.row(j);
        float acc = 0.0f;
        for (std::size_t k = 0; k < a_row.size(); ++k) acc += a_row[k] * brow[k];
        out[j] = acc;
    }
}

// Returns false when the row has no finite entry.
bool softmax_row(std::span<const float> in, double scale, std::span<float> out) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (float v : in)
        if (v != -std::numeric_limits<float>::infinity()) row_max = std::max(row_max, v / scale);
    if (row_max == -std::numeric_limits<double>::infinity()) return false;

    double denom = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
        if (in[j] == -std::numeric_limits<float>::infinity()) continue;
        denom += std::exp(in[j] / scale - row_max);
    }
    for (std::size_t j = 0; j < in.size(); ++j) {
        out[j] = in[j] == -std::numeric_limits<float>::infinity()
                     ? 0.0f
                     : static_cast<float>(std::exp(in[j] / scale - row_max) / denom);
    }
    return true;
}

void blend_row(std::span<const float> a, std::span<const float> b, float m,
               std::span<float> out) {
    const float keep = 1.0f - m;
    for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] * keep + b[j] * m;
}

void check_softmax(const Tensor& logits, float scale) {
    if (logits.rank() != 2)
        throw ShapeError("row_softmax needs a 2-D tensor, got " +
                         shape_to_string(logits.shape()));
    if (!(scale > 0.0f) || !std::isfinite(scale))
        throw ValueError("row_softmax scale must be a positive finite number");
}

[[noreturn]] void throw_empty_support(std::size_t row) {
    throw AttentionError("empty attention support (row " + std::to_string(row) +
                         " has every slot masked)");
}

}  // namespace

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_matmul(a, b);
    Tensor out({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a.row(i), b, out.row(i));
    return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    check_matmul_bt(a, b);
    Tensor out({a.rows(), b.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i) matmul_bt_row(a.row(i), b, out.row(i));
    return out;
}

Tensor row_softmax(const Tensor& logits, float scale) {
    check_softmax(logits, scale);
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < logits.rows(); ++i)
        if (!softmax_row(logits.row(i), scale, out.row(i))) throw_empty_support(i);
    return out;
}

Tensor blend_rows(const Tensor& a, const Tensor& b, const Tensor& m) {
    check_blend(a, b, m);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.rows(); ++i) blend_row(a.row(i), b.row(i), m[i], out.row(i));
    return out;
}

}  // namespace serial

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_matmul(a, b);
    Tensor out({a.rows(), b.cols()});
    const auto m = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
        const auto r = static_cast<std::size_t>(i);
        matmul_row(a.row(r), b, out.row(r));
    }
    return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    check_matmul_bt(a, b);
    Tensor out({a.rows(), b.rows()});
    const auto m = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
        const auto r = static_cast<std::size_t>(i);
        matmul_bt_row(a.row(r), b, out.row(r));
    }
    return out;
}

Tensor row_softmax(const Tensor& logits, float scale) {
    check_softmax(logits, scale);
    Tensor out(logits.shape());
    const auto m = static_cast<std::ptrdiff_t>(logits.rows());
    std::ptrdiff_t first_bad = m;
#pragma omp parallel for schedule(static) reduction(min : first_bad)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
        const auto r = static_cast<std::size_t>(i);
        if (!softmax_row(logits.row(r), scale, out.row(r))) first_bad = std::min(first_bad, i);
    }
    if (first_bad != m) throw_empty_support(static_cast<std::size_t>(first_bad));
    return out;
}

Tensor blend_rows(const Tensor& a, const Tensor& b, const Tensor& m) {
    check_blend(a, b, m);
    Tensor out(a.shape());
    const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        const auto r = static_cast<std::size_t>(i);
        blend_row(a.row(r), b.row(r), m[r], out.row(r));
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

void set_num_threads(int n) {
    static const int default_threads = omp_get_max_threads();
    omp_set_num_threads(n > 0 ? n : default_threads);
}

int num_threads() { return omp_get_max_threads(); }

}  // namespace psp
