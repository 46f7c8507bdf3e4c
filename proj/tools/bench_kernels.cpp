// Times the OpenMP kernels against their serial references.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "babylm/kernels.hpp"
#include "babylm/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  const auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<float> random_vec(size_t n, babylm::Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.gaussian());
  return v;
}

void row(const char* name, int64_t size_desc_a, int64_t size_desc_b, double serial_ms,
         double parallel_ms) {
  std::printf("%-18s %6lldx%-6lld %10.3f %10.3f %8.2fx\n", name,
              static_cast<long long>(size_desc_a), static_cast<long long>(size_desc_b),
              serial_ms, parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main(int argc, char** argv) {
  int64_t n = 512;
  int reps = 5;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--size") == 0 && i + 1 < argc) n = std::atoll(argv[++i]);
    if (std::strcmp(argv[i], "--reps") == 0 && i + 1 < argc) reps = std::atoi(argv[++i]);
    if (std::strcmp(argv[i], "--threads") == 0 && i + 1 < argc) {
#ifdef _OPENMP
      omp_set_num_threads(std::atoi(argv[++i]));
#else
      ++i;
#endif
    }
  }

#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#else
  std::printf("threads: 1 (OpenMP disabled)\n");
#endif
  std::printf("%-18s %13s %10s %10s %9s\n", "kernel", "size", "serial", "openmp", "speedup");

  babylm::Rng rng(7);
  namespace K = babylm::kernels;

  {
    auto a = random_vec(static_cast<size_t>(n * n), rng);
    auto b = random_vec(static_cast<size_t>(n * n), rng);
    std::vector<float> c(static_cast<size_t>(n * n));
    const double s = time_ms([&] { K::serial::matmul(a.data(), b.data(), c.data(), n, n, n); }, reps);
    const double p = time_ms([&] { K::matmul(a.data(), b.data(), c.data(), n, n, n); }, reps);
    row("matmul", n, n, s, p);
  }
  {
    auto a = random_vec(static_cast<size_t>(n * n), rng);
    auto b = random_vec(static_cast<size_t>(n * n), rng);
    std::vector<float> c(static_cast<size_t>(n * n));
    const double s = time_ms([&] { K::serial::matmul_nt(a.data(), b.data(), c.data(), n, n, n); }, reps);
    const double p = time_ms([&] { K::matmul_nt(a.data(), b.data(), c.data(), n, n, n); }, reps);
    row("matmul_nt", n, n, s, p);
  }
  {
    const int64_t rows = n * 8, d = n;
    auto x = random_vec(static_cast<size_t>(rows * d), rng);
    std::vector<float> y(static_cast<size_t>(rows * d));
    const double s = time_ms([&] { K::serial::softmax_rows(x.data(), y.data(), rows, d); }, reps);
    const double p = time_ms([&] { K::softmax_rows(x.data(), y.data(), rows, d); }, reps);
    row("softmax_rows", rows, d, s, p);
  }
  {
    const int64_t rows = n * 8, d = n;
    auto x = random_vec(static_cast<size_t>(rows * d), rng);
    auto g = random_vec(static_cast<size_t>(d), rng);
    auto b = random_vec(static_cast<size_t>(d), rng);
    std::vector<float> y(static_cast<size_t>(rows * d));
    const double s = time_ms(
        [&] { K::serial::layer_norm_rows(x.data(), g.data(), b.data(), y.data(), rows, d, 1e-5f); },
        reps);
    const double p = time_ms(
        [&] { K::layer_norm_rows(x.data(), g.data(), b.data(), y.data(), rows, d, 1e-5f); }, reps);
    row("layer_norm_rows", rows, d, s, p);
  }
  {
    const int64_t count = n * n * 4;
    auto x = random_vec(static_cast<size_t>(count), rng);
    std::vector<float> y(static_cast<size_t>(count));
    const double s = time_ms([&] { K::serial::gelu(x.data(), y.data(), count); }, reps);
    const double p = time_ms([&] { K::gelu(x.data(), y.data(), count); }, reps);
    row("gelu", count, 1, s, p);
  }
  return 0;
}
