#pragma once

// Dense compute kernels behind the autodiff primitives.
//
// Two implementations share these signatures:
//   ckd::kernels            OpenMP-parallel, used by the library
//   ckd::kernels::reference plain serial loops, kept for tests and benchmarks
//
// Parallel kernels only split work over independent output rows (or
// independent (sequence, head) blocks), and every output element is reduced
// in a fixed order. Results are therefore bit-identical for any thread count.
//
// All matrices are row-major. "Accumulate" variants add into the output.

#include <cstddef>

namespace ckd::kernels {

struct AttentionDims {
  std::size_t n_seq = 0;    // sequences in the batch
  std::size_t seq_len = 0;  // positions per sequence
  std::size_t n_heads = 0;
  std::size_t d_model = 0;  // width of q, k and v; n_heads divides it

  std::size_t head_dim() const noexcept { return d_model / n_heads; }
};

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

/// Threads the parallel kernels will use (omp_get_max_threads, or 1 without OpenMP).
int max_threads();
/// Set the thread count for subsequent parallel kernels.
void set_threads(int n);

}  // namespace ckd::kernels
