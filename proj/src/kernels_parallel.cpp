#include <algorithm>
#include <atomic>
#include <cmath>

#include "dbswin/kernels.hpp"

namespace dbswin::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 14;

#ifdef DBSWIN_HAVE_OPENMP
std::atomic<Backend> g_backend{Backend::kParallel};
#else
std::atomic<Backend> g_backend{Backend::kSerial};
#endif

}  // namespace

Backend active_backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend backend) { g_backend.store(backend, std::memory_order_relaxed); }

namespace parallel {

void gemm_nn_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c) {
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c) {
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c) {
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

void softmax_rows_backward_acc(std::size_t rows, std::size_t cols, std::span<const double> y,
                               std::span<const double> dy, std::span<double> dx) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* yr = y.data() + r * cols;
    const double* gr = dy.data() + r * cols;
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
    double* dr = dx.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
  }
}

void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                     std::span<const double> gamma, std::span<const double> beta, double eps,
                     std::span<double> y, std::span<double> xhat, std::span<double> rstd) {
  const double inv_n = 1.0 / static_cast<double>(cols);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
    mean *= inv_n;
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var *= inv_n;
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < cols; ++j) {
      const double h = (xr[j] - mean) * rs;
      xhat[r * cols + j] = h;
      y[r * cols + j] = gamma[j] * h + beta[j];
    }
  }
}

void layer_norm_rows_backward_acc(std::size_t rows, std::size_t cols,
                                  std::span<const double> xhat, std::span<const double> rstd,
                                  std::span<const double> gamma, std::span<const double> dy,
                                  std::span<double> dx, std::span<double> dgamma,
                                  std::span<double> dbeta) {
  const double inv_n = 1.0 / static_cast<double>(cols);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* hr = xhat.data() + r * cols;
    const double* gr = dy.data() + r * cols;
    double mean_g = 0.0;
    double mean_gh = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double g = gr[j] * gamma[j];
      mean_g += g;
      mean_gh += g * hr[j];
    }
    mean_g *= inv_n;
    mean_gh *= inv_n;
    double* dr = dx.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      dr[j] += rstd[r] * (gr[j] * gamma[j] - mean_g - hr[j] * mean_gh);
    }
  }
  // Column-parallel reduction keeps the row summation order of the serial loop.
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::size_t j = 0; j < cols; ++j) {
    double sg = dgamma[j];
    double sb = dbeta[j];
    for (std::size_t r = 0; r < rows; ++r) {
      sg += dy[r * cols + j] * xhat[r * cols + j];
      sb += dy[r * cols + j];
    }
    dgamma[j] = sg;
    dbeta[j] = sb;
  }
}

void gelu(std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static) if (n > kParallelWork)
  for (std::size_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_backward_acc(std::span<const double> x, std::span<const double> dy,
                       std::span<double> dx) {
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static) if (n > kParallelWork)
  for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * gelu_grad_scalar(x[i]);
}

}  // namespace parallel
}  // namespace dbswin::kernels
