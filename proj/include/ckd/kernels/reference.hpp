#pragma once

// Serial reference kernels: straightforward loops with the same signatures
// and contracts as ckd/kernels/kernels.hpp. Used as the oracle in kernel
// tests and as the baseline in the benchmark.

#include <cstddef>

#include "ckd/kernels/kernels.hpp"

namespace ckd::kernels::reference {

// C[n,q] (+)= A[n,p] * B[p,q]
void matmul_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t p,
               std::size_t q, bool accumulate);
// C[n,p] (+)= A[n,q] * B[p,q]^T
void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t p,
               std::size_t q, bool accumulate);
// C[p,q] (+)= A[n,p]^T * B[n,q]
void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t p,
               std::size_t q, bool accumulate);
void gelu_forward(const double* x, double* y, std::size_t n);
// dx += gelu'(x) * dy
void gelu_backward(const double* x, const double* dy, double* dx, std::size_t n);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
// dx += J_softmax^T dy, given y = softmax(x)
void softmax_rows_backward(const double* y, const double* dy, double* dx, std::size_t rows,
                           std::size_t cols);
void layer_norm_forward(const double* x, const double* gamma, const double* beta,
                        double* y, double* mean, double* rstd, std::size_t rows,
                        std::size_t cols, double eps);
// dx, dgamma, dbeta accumulate; any of them may be null
void layer_norm_backward(const double* x, const double* gamma, const double* mean,
                         const double* rstd, const double* dy, double* dx, double* dgamma,
                         double* dbeta, std::size_t rows, std::size_t cols);
// qkv[n_seq*T, 3D] -> out[n_seq*T, D]; probs[n_seq*H*T*T] saved for backward
void attention_forward(const double* qkv, double* out, double* probs,
                       const AttentionDims& dims);
// dqkv accumulates
void attention_backward(const double* qkv, const double* probs, const double* dout,
                        double* dqkv, const AttentionDims& dims);

}  // namespace ckd::kernels::reference
