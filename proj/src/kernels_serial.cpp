#include <algorithm>
#include <cmath>
#include <numbers>

#include "dbswin/kernels.hpp"

namespace dbswin::kernels {

namespace {
constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

double gelu_scalar(double x) {
  const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_scalar(double x) {
  const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
  const double t = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

namespace serial {

void gemm_nn_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c) {
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
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      dgamma[j] += dy[r * cols + j] * xhat[r * cols + j];
      dbeta[j] += dy[r * cols + j];
    }
  }
}

void gelu(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_backward_acc(std::span<const double> x, std::span<const double> dy,
                       std::span<double> dx) {
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * gelu_grad_scalar(x[i]);
}

}  // namespace serial
}  // namespace dbswin::kernels
