#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "ckd/kernels/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ckd::kernels {

namespace {

using Index = std::int64_t;  // OpenMP loop variables must be signed

// Below this many multiply-adds a kernel runs on the calling thread.
constexpr std::size_t kParallelWork = 1 << 14;

bool worth_parallel(std::size_t work) { return work >= kParallelWork; }

inline double gelu_cdf(double x) { return 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

void matmul_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t p,
               std::size_t q, bool accumulate) {
#pragma omp parallel for schedule(static) if (worth_parallel(n * p * q))
  for (Index ii = 0; ii < static_cast<Index>(n); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double* ci = c + i * q;
    if (!accumulate) std::fill(ci, ci + q, 0.0);
    const double* ai = a + i * p;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = ai[k];
      const double* bk = b + k * q;
      for (std::size_t j = 0; j < q; ++j) ci[j] += aik * bk[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t p,
               std::size_t q, bool accumulate) {
  // Transpose B[p,q] once so the inner loop streams contiguous memory.
  std::vector<double> bt(q * p);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < q; ++k) bt[k * p + j] = b[j * q + k];
  }
  matmul_nn(a, bt.data(), c, n, q, p, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t p,
               std::size_t q, bool accumulate) {
#pragma omp parallel for schedule(static) if (worth_parallel(n * p * q))
  for (Index ii = 0; ii < static_cast<Index>(p); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double* ci = c + i * q;
    if (!accumulate) std::fill(ci, ci + q, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const double aki = a[k * p + i];
      if (aki == 0.0) continue;
      const double* bk = b + k * q;
      for (std::size_t j = 0; j < q; ++j) ci[j] += aki * bk[j];
    }
  }
}

void gelu_forward(const double* x, double* y, std::size_t n) {
#pragma omp parallel for schedule(static) if (worth_parallel(n * 16))
  for (Index i = 0; i < static_cast<Index>(n); ++i) y[i] = x[i] * gelu_cdf(x[i]);
}

void gelu_backward(const double* x, const double* dy, double* dx, std::size_t n) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
#pragma omp parallel for schedule(static) if (worth_parallel(n * 16))
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
    dx[i] += dy[i] * (gelu_cdf(x[i]) + x[i] * pdf);
  }
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (worth_parallel(rows * cols * 8))
  for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
    const std::size_t r = static_cast<std::size_t>(rr);
    const double* xr = x + r * cols;
    double* yr = y + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

void softmax_rows_backward(const double* y, const double* dy, double* dx, std::size_t rows,
                           std::size_t cols) {
#pragma omp parallel for schedule(static) if (worth_parallel(rows * cols * 4))
  for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
    const std::size_t r = static_cast<std::size_t>(rr);
    const double* yr = y + r * cols;
    const double* dyr = dy + r * cols;
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * dyr[j];
    double* dxr = dx + r * cols;
    for (std::size_t j = 0; j < cols; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
  }
}

void layer_norm_forward(const double* x, const double* gamma, const double* beta, double* y,
                        double* mean, double* rstd, std::size_t rows, std::size_t cols,
                        double eps) {
  const double inv_n = 1.0 / static_cast<double>(cols);
#pragma omp parallel for schedule(static) if (worth_parallel(rows * cols * 4))
  for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
    const std::size_t r = static_cast<std::size_t>(rr);
    const double* xr = x + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
    mu *= inv_n;
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var *= inv_n;
    const double rs = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    double* yr = y + r * cols;
    for (std::size_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
  }
}

void layer_norm_backward(const double* x, const double* gamma, const double* mean,
                         const double* rstd, const double* dy, double* dx, double* dgamma,
                         double* dbeta, std::size_t rows, std::size_t cols) {
  const double inv_n = 1.0 / static_cast<double>(cols);
  const bool par = worth_parallel(rows * cols * 4);
  if (dx) {
#pragma omp parallel for schedule(static) if (par)
    for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
      const std::size_t r = static_cast<std::size_t>(rr);
      const double* xr = x + r * cols;
      const double* dyr = dy + r * cols;
      double sum_g = 0.0;
      double sum_gx = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        const double xhat = (xr[j] - mean[r]) * rstd[r];
        const double g = dyr[j] * gamma[j];
        sum_g += g;
        sum_gx += g * xhat;
      }
      double* dxr = dx + r * cols;
      for (std::size_t j = 0; j < cols; ++j) {
        const double xhat = (xr[j] - mean[r]) * rstd[r];
        dxr[j] += rstd[r] * (dyr[j] * gamma[j] - inv_n * sum_g - xhat * inv_n * sum_gx);
      }
    }
  }
  if (dgamma || dbeta) {
    // Column sums run over rows in order, one column per iteration.
#pragma omp parallel for schedule(static) if (par)
    for (Index jj = 0; jj < static_cast<Index>(cols); ++jj) {
      const std::size_t j = static_cast<std::size_t>(jj);
      double sg = 0.0;
      double sb = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = dy[r * cols + j];
        sg += d * (x[r * cols + j] - mean[r]) * rstd[r];
        sb += d;
      }
      if (dgamma) dgamma[j] += sg;
      if (dbeta) dbeta[j] += sb;
    }
  }
}

void attention_forward(const double* qkv, double* out, double* probs,
                       const AttentionDims& dims) {
  const std::size_t T = dims.seq_len;
  const std::size_t D = dims.d_model;
  const std::size_t H = dims.n_heads;
  const std::size_t hd = dims.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t blocks = dims.n_seq * H;
#pragma omp parallel for schedule(static) if (worth_parallel(blocks * T * T * hd))
  for (Index blk = 0; blk < static_cast<Index>(blocks); ++blk) {
    const std::size_t b = static_cast<std::size_t>(blk) / H;
    const std::size_t h = static_cast<std::size_t>(blk) % H;
    double* P = probs + static_cast<std::size_t>(blk) * T * T;
    for (std::size_t i = 0; i < T; ++i) {
      const double* qi = qkv + (b * T + i) * 3 * D + h * hd;
      double* Pi = P + i * T;
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= i; ++j) {
        const double* kj = qkv + (b * T + j) * 3 * D + D + h * hd;
        double s = 0.0;
        for (std::size_t e = 0; e < hd; ++e) s += qi[e] * kj[e];
        Pi[j] = s * scale;
        mx = std::max(mx, Pi[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        Pi[j] = std::exp(Pi[j] - mx);
        z += Pi[j];
      }
      const double inv = 1.0 / z;
      for (std::size_t j = 0; j <= i; ++j) Pi[j] *= inv;
      for (std::size_t j = i + 1; j < T; ++j) Pi[j] = 0.0;
      double* oi = out + (b * T + i) * D + h * hd;
      std::fill(oi, oi + hd, 0.0);
      for (std::size_t j = 0; j <= i; ++j) {
        const double pij = Pi[j];
        const double* vj = qkv + (b * T + j) * 3 * D + 2 * D + h * hd;
        for (std::size_t e = 0; e < hd; ++e) oi[e] += pij * vj[e];
      }
    }
  }
}

void attention_backward(const double* qkv, const double* probs, const double* dout,
                        double* dqkv, const AttentionDims& dims) {
  const std::size_t T = dims.seq_len;
  const std::size_t D = dims.d_model;
  const std::size_t H = dims.n_heads;
  const std::size_t hd = dims.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t blocks = dims.n_seq * H;
#pragma omp parallel for schedule(static) if (worth_parallel(blocks * T * T * hd))
  for (Index blk = 0; blk < static_cast<Index>(blocks); ++blk) {
    const std::size_t b = static_cast<std::size_t>(blk) / H;
    const std::size_t h = static_cast<std::size_t>(blk) % H;
    const double* P = probs + static_cast<std::size_t>(blk) * T * T;
    std::vector<double> dp(T);
    for (std::size_t i = 0; i < T; ++i) {
      const double* doi = dout + (b * T + i) * D + h * hd;
      const double* Pi = P + i * T;
      double dot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        const double* vj = qkv + (b * T + j) * 3 * D + 2 * D + h * hd;
        double s = 0.0;
        for (std::size_t e = 0; e < hd; ++e) s += doi[e] * vj[e];
        dp[j] = s;
        dot += Pi[j] * s;
      }
      const double* qi = qkv + (b * T + i) * 3 * D + h * hd;
      double* dqi = dqkv + (b * T + i) * 3 * D + h * hd;
      for (std::size_t j = 0; j <= i; ++j) {
        const double ds = Pi[j] * (dp[j] - dot) * scale;
        const double* kj = qkv + (b * T + j) * 3 * D + D + h * hd;
        double* dkj = dqkv + (b * T + j) * 3 * D + D + h * hd;
        double* dvj = dqkv + (b * T + j) * 3 * D + 2 * D + h * hd;
        const double pij = Pi[j];
        for (std::size_t e = 0; e < hd; ++e) {
          dqi[e] += ds * kj[e];
          dkj[e] += ds * qi[e];
          dvj[e] += pij * doi[e];
        }
      }
    }
  }
}

}  // namespace ckd::kernels
