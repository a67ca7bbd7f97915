#pragma once

#include <cstdint>

// Dense compute kernels. Every kernel comes in two flavors: a plain serial
// reference (suffix _serial) and an OpenMP-parallel version dispatched by the
// unsuffixed entry point. Parallelism is only over independent output rows,
// with a fixed per-element accumulation order, so both flavors produce
// bit-identical results for identical inputs at any thread count.
namespace fel::kern {

using std::int64_t;

bool parallel_enabled();
void set_parallel(bool on);
int thread_count();

// c[b] (+)= a[b] * b[b] with a: [batch,m,k], b: [batch,k,n], c: [batch,m,n].
// A 2-D matmul is batch == 1.
void bmm_nn(const double* a, const double* b, double* c, int64_t batch,
            int64_t m, int64_t k, int64_t n, bool accumulate);
void bmm_nn_serial(const double* a, const double* b, double* c, int64_t batch,
                   int64_t m, int64_t k, int64_t n, bool accumulate);

// c[b] (+)= a[b] * b[b]^T with a: [batch,m,k], b: [batch,n,k], c: [batch,m,n].
void bmm_nt(const double* a, const double* b, double* c, int64_t batch,
            int64_t m, int64_t k, int64_t n, bool accumulate);
void bmm_nt_serial(const double* a, const double* b, double* c, int64_t batch,
                   int64_t m, int64_t k, int64_t n, bool accumulate);

// c[b] (+)= a[b]^T * b[b] with a: [batch,k,m], b: [batch,k,n], c: [batch,m,n].
void bmm_tn(const double* a, const double* b, double* c, int64_t batch,
            int64_t m, int64_t k, int64_t n, bool accumulate);
void bmm_tn_serial(const double* a, const double* b, double* c, int64_t batch,
                   int64_t m, int64_t k, int64_t n, bool accumulate);

// y = 0.5 * x * (1 + erf(x / sqrt(2))), elementwise.
void gelu(const double* x, double* y, int64_t n);
void gelu_serial(const double* x, double* y, int64_t n);

// Row-wise layer norm over the last axis. xhat and rstd may be null; when
// given they receive the normalized rows and reciprocal stddev per row.
void layer_norm(const double* x, const double* gain, const double* bias,
                double eps, double* y, double* xhat, double* rstd,
                int64_t rows, int64_t dim);
void layer_norm_serial(const double* x, const double* gain, const double* bias,
                       double eps, double* y, double* xhat, double* rstd,
                       int64_t rows, int64_t dim);

// Row-wise max-subtracted softmax.
void softmax_rows(const double* x, double* y, int64_t rows, int64_t n);
void softmax_rows_serial(const double* x, double* y, int64_t rows, int64_t n);

}  // namespace fel::kern
