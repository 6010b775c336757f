#pragma once

// Dense row-major compute kernels behind the tensor ops.
//
// Every kernel exists twice: `serial` is the reference implementation and
// `parallel` splits the same loops across OpenMP threads. Each output element
// is produced by exactly one thread with the same summation order as the
// serial loop, so both namespaces return bitwise-identical results. Kernels
// named `*_acc` accumulate into their output instead of overwriting it.

#include <cstddef>
#include <span>

namespace dbswin::kernels {

namespace serial {

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c);
// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c);
// c[m,n] += a[k,m]^T * b[k,n]
void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c);

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);
void softmax_rows_backward_acc(std::size_t rows, std::size_t cols, std::span<const double> y,
                               std::span<const double> dy, std::span<double> dx);

// y = gamma * xhat + beta with xhat = (x - mean) * rstd; xhat and rstd are kept for backward.
void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                     std::span<const double> gamma, std::span<const double> beta, double eps,
                     std::span<double> y, std::span<double> xhat, std::span<double> rstd);
void layer_norm_rows_backward_acc(std::size_t rows, std::size_t cols,
                                  std::span<const double> xhat, std::span<const double> rstd,
                                  std::span<const double> gamma, std::span<const double> dy,
                                  std::span<double> dx, std::span<double> dgamma,
                                  std::span<double> dbeta);

void gelu(std::span<const double> x, std::span<double> y);
void gelu_backward_acc(std::span<const double> x, std::span<const double> dy,
                       std::span<double> dx);

}  // namespace serial

namespace parallel {

void gemm_nn_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c);
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c);
void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c);

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);
void softmax_rows_backward_acc(std::size_t rows, std::size_t cols, std::span<const double> y,
                               std::span<const double> dy, std::span<double> dx);

void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                     std::span<const double> gamma, std::span<const double> beta, double eps,
                     std::span<double> y, std::span<double> xhat, std::span<double> rstd);
void layer_norm_rows_backward_acc(std::size_t rows, std::size_t cols,
                                  std::span<const double> xhat, std::span<const double> rstd,
                                  std::span<const double> gamma, std::span<const double> dy,
                                  std::span<double> dx, std::span<double> dgamma,
                                  std::span<double> dbeta);

void gelu(std::span<const double> x, std::span<double> y);
void gelu_backward_acc(std::span<const double> x, std::span<const double> dy,
                       std::span<double> dx);

}  // namespace parallel

// Kernel set used by the tensor ops. Defaults to `parallel` when the library
// was built with OpenMP; tests flip it to compare against the reference.
enum class Backend { kSerial, kParallel };
Backend active_backend();
void set_backend(Backend backend);

// Scalar GELU (tanh approximation):
//   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
double gelu_scalar(double x);
double gelu_grad_scalar(double x);

}  // namespace dbswin::kernels
