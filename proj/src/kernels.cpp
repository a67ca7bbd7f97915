#include "fel/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fel::kern {

namespace {
std::atomic<bool> g_parallel{true};
}

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int thread_count() {
#ifdef _OPENMP
  return parallel_enabled() ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

namespace {

void bmm_nn_impl(const double* a, const double* b, double* c, int64_t batch,
                 int64_t m, int64_t k, int64_t n, bool accumulate, bool par) {
  const int64_t rows = batch * m;
#pragma omp parallel for schedule(static) if (par)
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t bi = r / m;
    const double* arow = a + r * k;
    const double* bmat = b + bi * k * n;
    double* crow = c + r * n;
    if (!accumulate) std::memset(crow, 0, sizeof(double) * static_cast<std::size_t>(n));
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = bmat + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void bmm_nt_impl(const double* a, const double* b, double* c, int64_t batch,
                 int64_t m, int64_t k, int64_t n, bool accumulate, bool par) {
  const int64_t rows = batch * m;
#pragma omp parallel for schedule(static) if (par)
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t bi = r / m;
    const double* arow = a + r * k;
    const double* bmat = b + bi * n * k;
    double* crow = c + r * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = bmat + j * k;
      double acc = 0.0;
      for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void bmm_tn_impl(const double* a, const double* b, double* c, int64_t batch,
                 int64_t m, int64_t k, int64_t n, bool accumulate, bool par) {
  const int64_t rows = batch * m;
#pragma omp parallel for schedule(static) if (par)
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t bi = r / m;
    const int64_t i = r - bi * m;
    const double* amat = a + bi * k * m;
    const double* bmat = b + bi * k * n;
    double* crow = c + r * n;
    if (!accumulate) std::memset(crow, 0, sizeof(double) * static_cast<std::size_t>(n));
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = amat[kk * m + i];
      const double* brow = bmat + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;

void gelu_impl(const double* x, double* y, int64_t n, bool par) {
#pragma omp parallel for schedule(static) if (par)
  for (int64_t i = 0; i < n; ++i) {
    y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
  }
}

void layer_norm_impl(const double* x, const double* gain, const double* bias,
                     double eps, double* y, double* xhat, double* rstd,
                     int64_t rows, int64_t dim, bool par) {
#pragma omp parallel for schedule(static) if (par)
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * dim;
    double* yr = y + r * dim;
    double mean = 0.0;
    for (int64_t j = 0; j < dim; ++j) mean += xr[j];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (int64_t j = 0; j < dim; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(dim);
    const double rs = 1.0 / std::sqrt(var + eps);
    if (rstd) rstd[r] = rs;
    for (int64_t j = 0; j < dim; ++j) {
      const double h = (xr[j] - mean) * rs;
      if (xhat) xhat[r * dim + j] = h;
      yr[j] = h * gain[j] + bias[j];
    }
  }
}

void softmax_rows_impl(const double* x, double* y, int64_t rows, int64_t n, bool par) {
#pragma omp parallel for schedule(static) if (par)
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * n;
    double* yr = y + r * n;
    double mx = xr[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < n; ++j) yr[j] *= inv;
  }
}

}  // namespace

void bmm_nn(const double* a, const double* b, double* c, int64_t batch,
            int64_t m, int64_t k, int64_t n, bool accumulate) {
  bmm_nn_impl(a, b, c, batch, m, k, n, accumulate, parallel_enabled());
}
void bmm_nn_serial(const double* a, const double* b, double* c, int64_t batch,
                   int64_t m, int64_t k, int64_t n, bool accumulate) {
  bmm_nn_impl(a, b, c, batch, m, k, n, accumulate, false);
}

void bmm_nt(const double* a, const double* b, double* c, int64_t batch,
            int64_t m, int64_t k, int64_t n, bool accumulate) {
  bmm_nt_impl(a, b, c, batch, m, k, n, accumulate, parallel_enabled());
}
void bmm_nt_serial(const double* a, const double* b, double* c, int64_t batch,
                   int64_t m, int64_t k, int64_t n, bool accumulate) {
  bmm_nt_impl(a, b, c, batch, m, k, n, accumulate, false);
}

void bmm_tn(const double* a, const double* b, double* c, int64_t batch,
            int64_t m, int64_t k, int64_t n, bool accumulate) {
  bmm_tn_impl(a, b, c, batch, m, k, n, accumulate, parallel_enabled());
}
void bmm_tn_serial(const double* a, const double* b, double* c, int64_t batch,
                   int64_t m, int64_t k, int64_t n, bool accumulate) {
  bmm_tn_impl(a, b, c, batch, m, k, n, accumulate, false);
}

void gelu(const double* x, double* y, int64_t n) {
  gelu_impl(x, y, n, parallel_enabled());
}
void gelu_serial(const double* x, double* y, int64_t n) {
  gelu_impl(x, y, n, false);
}

void layer_norm(const double* x, const double* gain, const double* bias,
                double eps, double* y, double* xhat, double* rstd,
                int64_t rows, int64_t dim) {
  layer_norm_impl(x, gain, bias, eps, y, xhat, rstd, rows, dim, parallel_enabled());
}
void layer_norm_serial(const double* x, const double* gain, const double* bias,
                       double eps, double* y, double* xhat, double* rstd,
                       int64_t rows, int64_t dim) {
  layer_norm_impl(x, gain, bias, eps, y, xhat, rstd, rows, dim, false);
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t n) {
  softmax_rows_impl(x, y, rows, n, parallel_enabled());
}
void softmax_rows_serial(const double* x, double* y, int64_t rows, int64_t n) {
  softmax_rows_impl(x, y, rows, n, false);
}

}  // namespace fel::kern
