// Parallel kernels against the serial reference. Sizes follow the teacher
// tier at batch 16: 16 sequences of 21 positions, width 64, 8 heads, vocabulary 33.
#include <benchmark/benchmark.h>

#include <vector>

#include "ckd/kernels/kernels.hpp"
#include "ckd/kernels/reference.hpp"
#include "ckd/util/rng.hpp"

namespace k = ckd::kernels;
namespace ref = ckd::kernels::reference;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  ckd::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return v;
}

template <auto Fn>
void BM_matmul_nn(benchmark::State& st) {
  const std::size_t n = st.range(0), p = st.range(1), q = st.range(2);
  const auto a = random_vec(n * p, 1), b = random_vec(p * q, 2);
  std::vector<double> c(n * q);
  for (auto _ : st) {
    Fn(a.data(), b.data(), c.data(), n, p, q, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(n * p * q));
}

template <auto Fn>
void BM_matmul_tn(benchmark::State& st) {
  const std::size_t n = st.range(0), p = st.range(1), q = st.range(2);
  const auto a = random_vec(n * p, 1), b = random_vec(n * q, 2);
  std::vector<double> c(p * q);
  for (auto _ : st) {
    Fn(a.data(), b.data(), c.data(), n, p, q, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(n * p * q));
}

template <auto Fn>
void BM_softmax(benchmark::State& st) {
  const std::size_t rows = st.range(0), cols = st.range(1);
  const auto x = random_vec(rows * cols, 3);
  std::vector<double> y(rows * cols);
  for (auto _ : st) {
    Fn(x.data(), y.data(), rows, cols);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Fn>
void BM_layer_norm(benchmark::State& st) {
  const std::size_t rows = st.range(0), cols = st.range(1);
  const auto x = random_vec(rows * cols, 4), g = random_vec(cols, 5), b = random_vec(cols, 6);
  std::vector<double> y(rows * cols), mean(rows), rstd(rows);
  for (auto _ : st) {
    Fn(x.data(), g.data(), b.data(), y.data(), mean.data(), rstd.data(), rows, cols, 1e-5);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Fwd, auto Bwd>
void BM_attention(benchmark::State& st) {
  k::AttentionDims d{static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)), 8,
                     static_cast<std::size_t>(st.range(2))};
  const std::size_t rows = d.n_seq * d.seq_len;
  const auto qkv = random_vec(rows * 3 * d.d_model, 7), dout = random_vec(rows * d.d_model, 8);
  std::vector<double> out(rows * d.d_model), probs(d.n_seq * d.n_heads * d.seq_len * d.seq_len),
      dqkv(rows * 3 * d.d_model);
  for (auto _ : st) {
    Fwd(qkv.data(), out.data(), probs.data(), d);
    Bwd(qkv.data(), probs.data(), dout.data(), dqkv.data(), d);
    benchmark::DoNotOptimize(dqkv.data());
  }
}

}  // namespace

BENCHMARK(BM_matmul_nn<ref::matmul_nn>)->Name("matmul_nn/reference")->Args({336, 64, 256})->Args({336, 64, 33});
BENCHMARK(BM_matmul_nn<k::matmul_nn>)->Name("matmul_nn/parallel")->Args({336, 64, 256})->Args({336, 64, 33});
BENCHMARK(BM_matmul_tn<ref::matmul_tn>)->Name("matmul_tn/reference")->Args({336, 64, 256});
BENCHMARK(BM_matmul_tn<k::matmul_tn>)->Name("matmul_tn/parallel")->Args({336, 64, 256});
BENCHMARK(BM_softmax<ref::softmax_rows>)->Name("softmax/reference")->Args({336, 33})->Args({4096, 256});
BENCHMARK(BM_softmax<k::softmax_rows>)->Name("softmax/parallel")->Args({336, 33})->Args({4096, 256});
BENCHMARK(BM_layer_norm<ref::layer_norm_forward>)->Name("layer_norm/reference")->Args({336, 64});
BENCHMARK(BM_layer_norm<k::layer_norm_forward>)->Name("layer_norm/parallel")->Args({336, 64});
BENCHMARK(BM_attention<ref::attention_forward, ref::attention_backward>)
    ->Name("attention/reference")
    ->Args({16, 21, 64});
BENCHMARK(BM_attention<k::attention_forward, k::attention_backward>)
    ->Name("attention/parallel")
    ->Args({16, 21, 64});

BENCHMARK_MAIN();
