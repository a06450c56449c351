#include "ckd/kernels/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace ckd::kernels::reference {

void matmul_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t p,
               std::size_t q, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < q; ++j) {
      double s = accumulate ? c[i * q + j] : 0.0;
      for (std::size_t k = 0; k < p; ++k) s += a[i * p + k] * b[k * q + j];
      c[i * q + j] = s;
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t p,
               std::size_t q, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double s = accumulate ? c[i * p + j] : 0.0;
      for (std::size_t k = 0; k < q; ++k) s += a[i * q + k] * b[j * q + k];
      c[i * p + j] = s;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t p,
               std::size_t q, bool accumulate) {
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) {
      double s = accumulate ? c[i * q + j] : 0.0;
      for (std::size_t k = 0; k < n; ++k) s += a[k * p + i] * b[k * q + j];
      c[i * q + j] = s;
    }
  }
}

void gelu_forward(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  }
}

void gelu_backward(const double* x, const double* dy, double* dx, std::size_t n) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < n; ++i) {
    const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
    dx[i] += dy[i] * (cdf + x[i] * pdf);
  }
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double* yr = y + r * cols;
    double mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= z;
  }
}

void softmax_rows_backward(const double* y, const double* dy, double* dx, std::size_t rows,
                           std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j) dot += y[r * cols + j] * dy[r * cols + j];
    for (std::size_t j = 0; j < cols; ++j) {
      dx[r * cols + j] += y[r * cols + j] * (dy[r * cols + j] - dot);
    }
  }
}

void layer_norm_forward(const double* x, const double* gamma, const double* beta, double* y,
                        double* mean, double* rstd, std::size_t rows, std::size_t cols,
                        double eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (std::size_t j = 0; j < cols; ++j) {
      y[r * cols + j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
    }
  }
}

void layer_norm_backward(const double* x, const double* gamma, const double* mean,
                         const double* rstd, const double* dy, double* dx, double* dgamma,
                         double* dbeta, std::size_t rows, std::size_t cols) {
  const double inv_n = 1.0 / static_cast<double>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    const double* dyr = dy + r * cols;
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double xhat = (xr[j] - mean[r]) * rstd[r];
      const double g = dyr[j] * gamma[j];
      sum_g += g;
      sum_gx += g * xhat;
      if (dgamma) dgamma[j] += dyr[j] * xhat;
      if (dbeta) dbeta[j] += dyr[j];
    }
    if (dx) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double xhat = (xr[j] - mean[r]) * rstd[r];
        const double g = dyr[j] * gamma[j];
        dx[r * cols + j] += rstd[r] * (g - inv_n * sum_g - xhat * inv_n * sum_gx);
      }
    }
  }
}

void attention_forward(const double* qkv, double* out, double* probs,
                       const AttentionDims& dims) {
  const std::size_t T = dims.seq_len;
  const std::size_t D = dims.d_model;
  const std::size_t hd = dims.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> scores(T);
  for (std::size_t b = 0; b < dims.n_seq; ++b) {
    for (std::size_t h = 0; h < dims.n_heads; ++h) {
      double* P = probs + (b * dims.n_heads + h) * T * T;
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = qkv + (b * T + i) * 3 * D + h * hd;
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = qkv + (b * T + j) * 3 * D + D + h * hd;
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) s += qi[e] * kj[e];
          scores[j] = s * scale;
          mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        for (std::size_t j = 0; j < T; ++j) P[i * T + j] = j <= i ? scores[j] / z : 0.0;
        double* oi = out + (b * T + i) * D + h * hd;
        for (std::size_t e = 0; e < hd; ++e) oi[e] = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = qkv + (b * T + j) * 3 * D + 2 * D + h * hd;
          for (std::size_t e = 0; e < hd; ++e) oi[e] += P[i * T + j] * vj[e];
        }
      }
    }
  }
}

void attention_backward(const double* qkv, const double* probs, const double* dout,
                        double* dqkv, const AttentionDims& dims) {
  const std::size_t T = dims.seq_len;
  const std::size_t D = dims.d_model;
  const std::size_t hd = dims.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> dp(T);
  for (std::size_t b = 0; b < dims.n_seq; ++b) {
    for (std::size_t h = 0; h < dims.n_heads; ++h) {
      const double* P = probs + (b * dims.n_heads + h) * T * T;
      for (std::size_t i = 0; i < T; ++i) {
        const double* doi = dout + (b * T + i) * D + h * hd;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = qkv + (b * T + j) * 3 * D + 2 * D + h * hd;
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) s += doi[e] * vj[e];
          dp[j] = s;
          dot += P[i * T + j] * s;
        }
        const double* qi = qkv + (b * T + i) * 3 * D + h * hd;
        double* dqi = dqkv + (b * T + i) * 3 * D + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = P[i * T + j] * (dp[j] - dot) * scale;
          const double* kj = qkv + (b * T + j) * 3 * D + D + h * hd;
          double* dkj = dqkv + (b * T + j) * 3 * D + D + h * hd;
          double* dvj = dqkv + (b * T + j) * 3 * D + 2 * D + h * hd;
          for (std::size_t e = 0; e < hd; ++e) {
            dqi[e] += ds * kj[e];
            dkj[e] += ds * qi[e];
            dvj[e] += P[i * T + j] * doi[e];
          }
        }
      }
    }
  }
}

}  // namespace ckd::kernels::reference
