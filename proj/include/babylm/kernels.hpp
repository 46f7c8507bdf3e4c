#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace babylm::kernels {

// Stable softmax of a single vector. Throws "empty logits" on empty input.
std::vector<float> softmax(std::span<const float> logits);

// Dense kernels used by the autograd layer. Each output row is computed by
// exactly one thread with a fixed-order inner loop, so results are identical
// for any thread count. Reductions accumulate in double.
//
// The `serial` namespace carries plain-loop reference implementations of the
// same kernels; tests compare the two and tools/bench-kernels times them.

// c[n,m] = a[n,k] * b[k,m]  (+= when accumulate)
void matmul(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
            bool accumulate = false);

// c[n,m] = a[n,k] * b[m,k]^T
void matmul_nt(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
               bool accumulate = false);

// c[k,m] = a[n,k]^T * b[n,m]
void matmul_tn(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
               bool accumulate = false);

// Row-wise softmax with max subtraction; y may alias x.
void softmax_rows(const float* x, float* y, int64_t n, int64_t d);

// y = gain .* (x - mean) / sqrt(var + eps) + bias, per row.
// xhat (optional, [n*d]) and inv_std (optional, [n]) receive forward caches.
void layer_norm_rows(const float* x, const float* gain, const float* bias, float* y,
                     int64_t n, int64_t d, float eps, float* xhat = nullptr,
                     float* inv_std = nullptr);

// Backward of layer_norm_rows given caches; accumulates into dx, dgain, dbias.
void layer_norm_rows_backward(const float* dy, const float* xhat, const float* inv_std,
                              const float* gain, float* dx, float* dgain, float* dbias,
                              int64_t n, int64_t d);

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
void gelu(const float* x, float* y, int64_t n);
void gelu_backward(const float* x, const float* dy, float* dx, int64_t n);

namespace serial {
void matmul(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
            bool accumulate = false);
void matmul_nt(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
               bool accumulate = false);
void matmul_tn(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
               bool accumulate = false);
void softmax_rows(const float* x, float* y, int64_t n, int64_t d);
void layer_norm_rows(const float* x, const float* gain, const float* bias, float* y,
                     int64_t n, int64_t d, float eps, float* xhat = nullptr,
                     float* inv_std = nullptr);
void layer_norm_rows_backward(const float* dy, const float* xhat, const float* inv_std,
                              const float* gain, float* dx, float* dgain, float* dbias,
                              int64_t n, int64_t d);
void gelu(const float* x, float* y, int64_t n);
void gelu_backward(const float* x, const float* dy, float* dx, int64_t n);
}  // namespace serial

}  // namespace babylm::kernels
