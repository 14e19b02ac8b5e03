#pragma once

#include "psp/tensor.hpp"

// Dense kernels used by the attention engine.
//
// Every kernel exists twice: an OpenMP version in namespace psp and a
// single-threaded reference in psp::serial. Work is split across output rows
// only, so each output element sees the same sequence of float operations in
// both versions and the results are bitwise identical for any thread count.

namespace psp {

// a[m x k] . b[k x n]. Accumulation per output element runs over k from left
// to right starting at 0.0f.
Tensor matmul(const Tensor& a, const Tensor& b);

// a[m x k] . b[n x k]^T, same accumulation order as matmul(a, transpose(b)).
Tensor matmul_bt(const Tensor& a, const Tensor& b);

// Stable row softmax of logits / scale. -inf entries map to exactly 0.
// Throws AttentionError("empty attention support") when a row has no finite
// entry.
Tensor row_softmax(const Tensor& logits, float scale);

// a * (1 - m) + b * m, with m[r] broadcast across the columns of row r.
Tensor blend_rows(const Tensor& a, const Tensor& b, const Tensor& m);

Tensor transpose(const Tensor& a);

// Thread cap for the parallel kernels; 0 restores the OpenMP default.
void set_num_threads(int n);
int num_threads();

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor row_softmax(const Tensor& logits, float scale);
Tensor blend_rows(const Tensor& a, const Tensor& b, const Tensor& m);

}  // namespace serial

}  // namespace psp
