#include <doctest.h>

#include <cmath>
#include <vector>

#include "ckd/kernels/kernels.hpp"
#include "ckd/kernels/reference.hpp"
#include "support.hpp"

using namespace ckd;
using testing::max_abs_diff;
using testing::random_values;

namespace {

// Sizes large enough to cross the parallel threshold.
constexpr std::size_t N = 96, P = 80, Q = 72;

}  // namespace

TEST_CASE("matmul variants agree with the serial reference") {
  Rng rng(11);
  const auto a = random_values(rng, N * P);
  const auto b = random_values(rng, P * Q);
  const auto bt = random_values(rng, Q * P);
  const auto an = random_values(rng, N * Q);
  for (bool acc : {false, true}) {
    std::vector<double> c0(N * Q, 0.5), c1(N * Q, 0.5);
    kernels::matmul_nn(a.data(), b.data(), c0.data(), N, P, Q, acc);
    kernels::reference::matmul_nn(a.data(), b.data(), c1.data(), N, P, Q, acc);
    CHECK(max_abs_diff(c0, c1) < 1e-12);

    std::vector<double> d0(N * Q, 0.25), d1(N * Q, 0.25);
    kernels::matmul_nt(a.data(), bt.data(), d0.data(), N, Q, P, acc);
    kernels::reference::matmul_nt(a.data(), bt.data(), d1.data(), N, Q, P, acc);
    CHECK(max_abs_diff(d0, d1) < 1e-12);

    std::vector<double> e0(P * Q, -1.0), e1(P * Q, -1.0);
    kernels::matmul_tn(a.data(), an.data(), e0.data(), N, P, Q, acc);
    kernels::reference::matmul_tn(a.data(), an.data(), e1.data(), N, P, Q, acc);
    CHECK(max_abs_diff(e0, e1) < 1e-12);
  }
}

TEST_CASE("matmul of 2x3 and 3x4 by hand") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  const std::vector<double> b{1, 0, 0, 1, 0, 1, 0, 1, 1, 1, 1, 0};
  std::vector<double> c(8);
  kernels::matmul_nn(a.data(), b.data(), c.data(), 2, 3, 4, false);
  CHECK(c == std::vector<double>{4, 5, 3, 3, 10, 11, 6, 9});
}

TEST_CASE("elementwise and row kernels agree with the serial reference") {
  Rng rng(12);
  const std::size_t rows = 200, cols = 48;
  const auto x = random_values(rng, rows * cols, -3.0, 3.0);
  const auto dy = random_values(rng, rows * cols);
  const auto gamma = random_values(rng, cols, 0.5, 1.5);
  const auto beta = random_values(rng, cols);

  std::vector<double> y0(x.size()), y1(x.size());
  kernels::gelu_forward(x.data(), y0.data(), x.size());
  kernels::reference::gelu_forward(x.data(), y1.data(), x.size());
  CHECK(max_abs_diff(y0, y1) < 1e-14);

  std::vector<double> g0(x.size(), 0.1), g1(x.size(), 0.1);
  kernels::gelu_backward(x.data(), dy.data(), g0.data(), x.size());
  kernels::reference::gelu_backward(x.data(), dy.data(), g1.data(), x.size());
  CHECK(max_abs_diff(g0, g1) < 1e-14);

  kernels::softmax_rows(x.data(), y0.data(), rows, cols);
  kernels::reference::softmax_rows(x.data(), y1.data(), rows, cols);
  CHECK(max_abs_diff(y0, y1) < 1e-14);

  std::fill(g0.begin(), g0.end(), 0.0);
  std::fill(g1.begin(), g1.end(), 0.0);
  kernels::softmax_rows_backward(y0.data(), dy.data(), g0.data(), rows, cols);
  kernels::reference::softmax_rows_backward(y1.data(), dy.data(), g1.data(), rows, cols);
  CHECK(max_abs_diff(g0, g1) < 1e-14);

  std::vector<double> m0(rows), m1(rows), r0(rows), r1(rows);
  kernels::layer_norm_forward(x.data(), gamma.data(), beta.data(), y0.data(), m0.data(),
                              r0.data(), rows, cols, 1e-5);
  kernels::reference::layer_norm_forward(x.data(), gamma.data(), beta.data(), y1.data(),
                                         m1.data(), r1.data(), rows, cols, 1e-5);
  CHECK(max_abs_diff(y0, y1) < 1e-12);

  std::vector<double> dx0(x.size()), dx1(x.size()), dg0(cols), dg1(cols), db0(cols), db1(cols);
  kernels::layer_norm_backward(x.data(), gamma.data(), m0.data(), r0.data(), dy.data(),
                               dx0.data(), dg0.data(), db0.data(), rows, cols);
  kernels::reference::layer_norm_backward(x.data(), gamma.data(), m1.data(), r1.data(),
                                          dy.data(), dx1.data(), dg1.data(), db1.data(), rows,
                                          cols);
  CHECK(max_abs_diff(dx0, dx1) < 1e-12);
  CHECK(max_abs_diff(dg0, dg1) < 1e-10);
  CHECK(max_abs_diff(db0, db1) < 1e-10);
}

TEST_CASE("attention kernels agree with the serial reference") {
  Rng rng(13);
  const kernels::AttentionDims dims{6, 17, 4, 32};
  const std::size_t rows = dims.n_seq * dims.seq_len;
  const auto qkv = random_values(rng, rows * 3 * dims.d_model, -2.0, 2.0);
  const auto dout = random_values(rng, rows * dims.d_model);
  const std::size_t np = dims.n_seq * dims.n_heads * dims.seq_len * dims.seq_len;

  std::vector<double> o0(rows * dims.d_model), o1(o0.size()), p0(np), p1(np);
  kernels::attention_forward(qkv.data(), o0.data(), p0.data(), dims);
  kernels::reference::attention_forward(qkv.data(), o1.data(), p1.data(), dims);
  CHECK(max_abs_diff(o0, o1) < 1e-13);
  CHECK(max_abs_diff(p0, p1) < 1e-14);

  std::vector<double> d0(qkv.size()), d1(qkv.size());
  kernels::attention_backward(qkv.data(), p0.data(), dout.data(), d0.data(), dims);
  kernels::reference::attention_backward(qkv.data(), p1.data(), dout.data(), d1.data(), dims);
  CHECK(max_abs_diff(d0, d1) < 1e-12);

  // Causality: probabilities above the diagonal are exactly zero.
  for (std::size_t i = 0; i < dims.seq_len; ++i) {
    for (std::size_t j = i + 1; j < dims.seq_len; ++j) CHECK(p0[i * dims.seq_len + j] == 0.0);
  }
}

TEST_CASE("parallel kernels are bit-identical across thread counts") {
  Rng rng(14);
  const auto a = random_values(rng, N * P);
  const auto b = random_values(rng, P * Q);
  const kernels::AttentionDims dims{8, 12, 2, 16};
  const auto qkv = random_values(rng, dims.n_seq * dims.seq_len * 3 * dims.d_model);
  const auto dout = random_values(rng, dims.n_seq * dims.seq_len * dims.d_model);

  auto run = [&](int threads) {
    kernels::set_threads(threads);
    std::vector<double> out(N * Q);
    kernels::matmul_nn(a.data(), b.data(), out.data(), N, P, Q, false);
    std::vector<double> tn(P * Q);
    kernels::matmul_tn(a.data(), out.data(), tn.data(), N, P, Q, false);
    std::vector<double> o(dims.n_seq * dims.seq_len * dims.d_model);
    std::vector<double> pr(dims.n_seq * dims.n_heads * dims.seq_len * dims.seq_len);
    kernels::attention_forward(qkv.data(), o.data(), pr.data(), dims);
    std::vector<double> dq(qkv.size());
    kernels::attention_backward(qkv.data(), pr.data(), dout.data(), dq.data(), dims);
    out.insert(out.end(), tn.begin(), tn.end());
    out.insert(out.end(), o.begin(), o.end());
    out.insert(out.end(), dq.begin(), dq.end());
    return out;
  };
  const int saved = kernels::max_threads();
  const auto one = run(1);
  const auto four = run(4);
  kernels::set_threads(saved);
  CHECK(one == four);
}
