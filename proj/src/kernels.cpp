#include "babylm/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace babylm::kernels {

namespace detail {

// Per-row bodies shared by the serial and OpenMP paths; keeping one body per
// output row guarantees bit-identical results for any thread count.

inline void matmul_row(const float* a, const float* b, float* c, int64_t i, int64_t k,
                       int64_t m, bool accumulate, double* buf) {
  for (int64_t j = 0; j < m; ++j) buf[j] = 0.0;
  const float* ai = a + i * k;
  for (int64_t kk = 0; kk < k; ++kk) {
    const double av = ai[kk];
    const float* brow = b + kk * m;
    for (int64_t j = 0; j < m; ++j) buf[j] += av * brow[j];
  }
  float* ci = c + i * m;
  if (accumulate) {
    for (int64_t j = 0; j < m; ++j) ci[j] += static_cast<float>(buf[j]);
  } else {
    for (int64_t j = 0; j < m; ++j) ci[j] = static_cast<float>(buf[j]);
  }
}

inline void matmul_nt_row(const float* a, const float* b, float* c, int64_t i, int64_t k,
                          int64_t m, bool accumulate) {
  const float* ai = a + i * k;
  float* ci = c + i * m;
  for (int64_t j = 0; j < m; ++j) {
    const float* bj = b + j * k;
    double acc = 0.0;
    for (int64_t kk = 0; kk < k; ++kk) acc += static_cast<double>(ai[kk]) * bj[kk];
    if (accumulate)
      ci[j] += static_cast<float>(acc);
    else
      ci[j] = static_cast<float>(acc);
  }
}

inline void matmul_tn_row(const float* a, const float* b, float* c, int64_t kk, int64_t n,
                          int64_t k, int64_t m, bool accumulate, double* buf) {
  for (int64_t j = 0; j < m; ++j) buf[j] = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double av = a[i * k + kk];
    const float* brow = b + i * m;
    for (int64_t j = 0; j < m; ++j) buf[j] += av * brow[j];
  }
  float* crow = c + kk * m;
  if (accumulate) {
    for (int64_t j = 0; j < m; ++j) crow[j] += static_cast<float>(buf[j]);
  } else {
    for (int64_t j = 0; j < m; ++j) crow[j] = static_cast<float>(buf[j]);
  }
}

inline void softmax_row(const float* x, float* y, int64_t i, int64_t d) {
  const float* xi = x + i * d;
  float* yi = y + i * d;
  float mx = xi[0];
  for (int64_t j = 1; j < d; ++j) mx = xi[j] > mx ? xi[j] : mx;
  double sum = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    const double e = std::exp(static_cast<double>(xi[j]) - mx);
    yi[j] = static_cast<float>(e);
    sum += e;
  }
  const double inv = 1.0 / sum;
  for (int64_t j = 0; j < d; ++j) yi[j] = static_cast<float>(yi[j] * inv);
}

inline void layer_norm_row(const float* x, const float* gain, const float* bias, float* y,
                           int64_t i, int64_t d, float eps, float* xhat, float* inv_std) {
  const float* xi = x + i * d;
  double mean = 0.0;
  for (int64_t j = 0; j < d; ++j) mean += xi[j];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    const double c = xi[j] - mean;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const double istd = 1.0 / std::sqrt(var + eps);
  if (inv_std) inv_std[i] = static_cast<float>(istd);
  float* yi = y + i * d;
  float* xh = xhat ? xhat + i * d : nullptr;
  for (int64_t j = 0; j < d; ++j) {
    const float h = static_cast<float>((xi[j] - mean) * istd);
    if (xh) xh[j] = h;
    yi[j] = gain[j] * h + bias[j];
  }
}

inline void layer_norm_backward_row(const float* dy, const float* xhat, const float* inv_std,
                                    const float* gain, float* dx, int64_t i, int64_t d) {
  const float* dyi = dy + i * d;
  const float* xh = xhat + i * d;
  float* dxi = dx + i * d;
  double sum_g = 0.0, sum_gx = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    const double g = static_cast<double>(gain[j]) * dyi[j];
    sum_g += g;
    sum_gx += g * xh[j];
  }
  const double mg = sum_g / static_cast<double>(d);
  const double mgx = sum_gx / static_cast<double>(d);
  const double istd = inv_std[i];
  for (int64_t j = 0; j < d; ++j) {
    const double g = static_cast<double>(gain[j]) * dyi[j];
    dxi[j] += static_cast<float>((g - mg - xh[j] * mgx) * istd);
  }
}

inline float gelu_one(float x) {
  return static_cast<float>(0.5 * static_cast<double>(x) *
                            (1.0 + std::erf(static_cast<double>(x) * 0.7071067811865476)));
}

inline float gelu_grad_one(float x) {
  const double xd = x;
  const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865476));
  const double pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014327;
  return static_cast<float>(cdf + xd * pdf);
}

}  // namespace detail

std::vector<float> softmax(std::span<const float> logits) {
  if (logits.empty()) throw std::runtime_error("empty logits");
  for (float v : logits)
    if (!std::isfinite(v)) throw std::runtime_error("softmax: non-finite logits");
  std::vector<float> out(logits.size());
  detail::softmax_row(logits.data(), out.data(), 0, static_cast<int64_t>(logits.size()));
  return out;
}

// ---------------------------------------------------------------- parallel

void matmul(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
            bool accumulate) {
#pragma omp parallel
  {
    std::vector<double> buf(static_cast<size_t>(m));
#pragma omp for schedule(static)
    for (int64_t i = 0; i < n; ++i) detail::matmul_row(a, b, c, i, k, m, accumulate, buf.data());
  }
}

void matmul_nt(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) detail::matmul_nt_row(a, b, c, i, k, m, accumulate);
}

void matmul_tn(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
               bool accumulate) {
#pragma omp parallel
  {
    std::vector<double> buf(static_cast<size_t>(m));
#pragma omp for schedule(static)
    for (int64_t kk = 0; kk < k; ++kk)
      detail::matmul_tn_row(a, b, c, kk, n, k, m, accumulate, buf.data());
  }
}

void softmax_rows(const float* x, float* y, int64_t n, int64_t d) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) detail::softmax_row(x, y, i, d);
}

void layer_norm_rows(const float* x, const float* gain, const float* bias, float* y,
                     int64_t n, int64_t d, float eps, float* xhat, float* inv_std) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i)
    detail::layer_norm_row(x, gain, bias, y, i, d, eps, xhat, inv_std);
}

void layer_norm_rows_backward(const float* dy, const float* xhat, const float* inv_std,
                              const float* gain, float* dx, float* dgain, float* dbias,
                              int64_t n, int64_t d) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i)
    detail::layer_norm_backward_row(dy, xhat, inv_std, gain, dx, i, d);
  // Gain/bias reductions run serially in fixed order for determinism.
  for (int64_t j = 0; j < d; ++j) {
    double sg = 0.0, sb = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      sg += static_cast<double>(dy[i * d + j]) * xhat[i * d + j];
      sb += dy[i * d + j];
    }
    dgain[j] += static_cast<float>(sg);
    dbias[j] += static_cast<float>(sb);
  }
}

void gelu(const float* x, float* y, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = detail::gelu_one(x[i]);
}

void gelu_backward(const float* x, const float* dy, float* dx, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * detail::gelu_grad_one(x[i]);
}

// ----------------------------------------------------------------- serial

namespace serial {

void matmul(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
            bool accumulate) {
  std::vector<double> buf(static_cast<size_t>(m));
  for (int64_t i = 0; i < n; ++i) detail::matmul_row(a, b, c, i, k, m, accumulate, buf.data());
}

void matmul_nt(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
               bool accumulate) {
  for (int64_t i = 0; i < n; ++i) detail::matmul_nt_row(a, b, c, i, k, m, accumulate);
}

void matmul_tn(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
               bool accumulate) {
  std::vector<double> buf(static_cast<size_t>(m));
  for (int64_t kk = 0; kk < k; ++kk)
    detail::matmul_tn_row(a, b, c, kk, n, k, m, accumulate, buf.data());
}

void softmax_rows(const float* x, float* y, int64_t n, int64_t d) {
  for (int64_t i = 0; i < n; ++i) detail::softmax_row(x, y, i, d);
}

void layer_norm_rows(const float* x, const float* gain, const float* bias, float* y,
                     int64_t n, int64_t d, float eps, float* xhat, float* inv_std) {
  for (int64_t i = 0; i < n; ++i)
    detail::layer_norm_row(x, gain, bias, y, i, d, eps, xhat, inv_std);
}

void layer_norm_rows_backward(const float* dy, const float* xhat, const float* inv_std,
                              const float* gain, float* dx, float* dgain, float* dbias,
                              int64_t n, int64_t d) {
  for (int64_t i = 0; i < n; ++i)
    detail::layer_norm_backward_row(dy, xhat, inv_std, gain, dx, i, d);
  for (int64_t j = 0; j < d; ++j) {
    double sg = 0.0, sb = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      sg += static_cast<double>(dy[i * d + j]) * xhat[i * d + j];
      sb += dy[i * d + j];
    }
    dgain[j] += static_cast<float>(sg);
    dbias[j] += static_cast<float>(sb);
  }
}

void gelu(const float* x, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = detail::gelu_one(x[i]);
}

void gelu_backward(const float* x, const float* dy, float* dx, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * detail::gelu_grad_one(x[i]);
}

}  // namespace serial

}  // namespace babylm::kernels
