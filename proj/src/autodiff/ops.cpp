#include "ckd/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "ckd/kernels/kernels.hpp"
#include "ckd/util/error.hpp"

namespace ckd::ad {

namespace {

Tape& tape_of(Var a) {
  if (!a.tape) throw Error("autodiff: variable is not attached to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw Error("autodiff: operands live on different tapes");
  return tape_of(a);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ (lhs " + a.shape().str() + ", rhs " +
                     b.shape().str() + ")");
  }
}

void require_rank2(const char* op, const char* which, const Tensor& t) {
  if (t.shape().rank() != 2) {
    throw ShapeError(std::string(op) + ": " + which + " must be a matrix, got " +
                     t.shape().str());
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2("matmul", "lhs", av);
  require_rank2("matmul", "rhs", bv);
  const std::size_t n = av.shape()[0], p = av.shape()[1], q = bv.shape()[1];
  if (bv.shape()[0] != p) {
    throw ShapeError("matmul: inner dimensions differ (lhs " + av.shape().str() + ", rhs " +
                     bv.shape().str() + ")");
  }
  Tensor out(Shape{n, q});
  kernels::matmul_nn(av.ptr(), bv.ptr(), out.ptr(), n, p, q, false);
  const std::uint32_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), {a, b}, [ia, ib, n, p, q](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      kernels::matmul_nt(g.ptr(), t.value(ib).ptr(), t.grad(ia).ptr(), n, p, q, true);
    }
    if (t.requires_grad(ib)) {
      kernels::matmul_tn(t.value(ia).ptr(), g.ptr(), t.grad(ib).ptr(), n, p, q, true);
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out.add_(b.value());
  const std::uint32_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).add_(g);
    if (t.requires_grad(ib)) t.grad(ib).add_(g);
  });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::uint32_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).add_(g);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::uint32_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_bias(Var a, Var bias) {
  Tape& tape = tape_of(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  if (bv.size() != cols || bv.rows() != 1) {
    throw ShapeError("add_bias: bias " + bv.shape().str() + " does not match row width of " +
                     av.shape().str());
  }
  Tensor out = av;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  const std::uint32_t ia = a.id, ib = bias.id;
  return tape.record(std::move(out), {a, bias},
                     [ia, ib, rows, cols](Tape& t, std::uint32_t self) {
                       const Tensor& g = t.grad(self);
                       if (t.requires_grad(ia)) t.grad(ia).add_(g);
                       if (t.requires_grad(ib)) {
                         Tensor& gb = t.grad(ib);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                         }
                       }
                     });
}

Var scale(Var a, double s) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  const std::uint32_t ia = a.id;
  return tape.record(std::move(out), {a}, [ia, s](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var gelu(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  kernels::gelu_forward(av.ptr(), out.ptr(), av.size());
  const std::uint32_t ia = a.id;
  return tape.record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    kernels::gelu_backward(t.value(ia).ptr(), g.ptr(), t.grad(ia).ptr(), g.size());
  });
}

Var softmax(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  const std::size_t rows = av.rows(), cols = av.cols();
  kernels::softmax_rows(av.ptr(), out.ptr(), rows, cols);
  const std::uint32_t ia = a.id;
  return tape.record(std::move(out), {a}, [ia, rows, cols](Tape& t, std::uint32_t self) {
    kernels::softmax_rows_backward(t.value(self).ptr(), t.grad(self).ptr(), t.grad(ia).ptr(),
                                   rows, cols);
  });
}

Var log(Var a) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
    v = std::log(v);
  }
  const std::uint32_t ia = a.id;
  return tape.record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
  });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::uint32_t ia = a.id;
  return tape.record(Tensor::scalar(s), {a}, [ia](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(ia).data()) v += g;
  });
}

Var select_rows(Var a, std::span<const std::uint32_t> index) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  if (index.empty()) throw ShapeError("select_rows: empty index");
  for (std::uint32_t r : index) {
    if (r >= rows) {
      throw ShapeError("select_rows: row " + std::to_string(r) + " out of range for " +
                       av.shape().str());
    }
  }
  Tensor out(Shape{index.size(), cols});
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::copy_n(av.ptr() + index[i] * cols, cols, out.ptr() + i * cols);
  }
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  const std::uint32_t ia = a.id;
  return tape.record(std::move(out), {a},
                     [ia, cols, idx = std::move(idx)](Tape& t, std::uint32_t self) {
                       const Tensor& g = t.grad(self);
                       Tensor& ga = t.grad(ia);
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         double* dst = ga.ptr() + idx[i] * cols;
                         const double* src = g.ptr() + i * cols;
                         for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                       }
                     });
}

Var concat_rows(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw ShapeError("concat_rows: column counts differ (top " + av.shape().str() + ", bottom " +
                     bv.shape().str() + ")");
  }
  const std::size_t ra = av.rows(), rb = bv.rows(), cols = av.cols();
  Tensor out(Shape{ra + rb, cols});
  std::copy_n(av.ptr(), av.size(), out.ptr());
  std::copy_n(bv.ptr(), bv.size(), out.ptr() + av.size());
  const std::uint32_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), {a, b}, [ia, ib, ra, rb, cols](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < ra * cols; ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < rb * cols; ++i) gb[i] += g[ra * cols + i];
    }
  });
}

Var mask_fill(Var a, std::span<const std::uint8_t> mask, double value) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  if (mask.size() != out.size()) {
    throw ShapeError("mask_fill: mask length " + std::to_string(mask.size()) +
                     " does not match " + out.shape().str());
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i]) out[i] = value;
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  const std::uint32_t ia = a.id;
  return tape.record(std::move(out), {a}, [ia, m = std::move(m)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!m[i]) ga[i] += g[i];
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& tape = tape_of(x, gamma);
  tape_of(x, beta);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gamma.value().size() != cols || beta.value().size() != cols) {
    throw ShapeError("layer_norm: gamma " + gamma.value().shape().str() + " / beta " +
                     beta.value().shape().str() + " do not match row width of " +
                     xv.shape().str());
  }
  Tensor out(xv.shape());
  auto stats = std::make_shared<std::vector<double>>(2 * rows);
  kernels::layer_norm_forward(xv.ptr(), gamma.value().ptr(), beta.value().ptr(), out.ptr(),
                              stats->data(), stats->data() + rows, rows, cols, eps);
  const std::uint32_t ix = x.id, ig = gamma.id, ib = beta.id;
  return tape.record(std::move(out), {x, gamma, beta},
                     [ix, ig, ib, rows, cols, stats](Tape& t, std::uint32_t self) {
                       const Tensor& g = t.grad(self);
                       double* dx = t.requires_grad(ix) ? t.grad(ix).ptr() : nullptr;
                       double* dg = t.requires_grad(ig) ? t.grad(ig).ptr() : nullptr;
                       double* db = t.requires_grad(ib) ? t.grad(ib).ptr() : nullptr;
                       kernels::layer_norm_backward(t.value(ix).ptr(), t.value(ig).ptr(),
                                                    stats->data(), stats->data() + rows,
                                                    g.ptr(), dx, dg, db, rows, cols);
                     });
}

Var causal_attention(Var qkv, std::size_t n_seq, std::size_t seq_len, std::size_t n_heads) {
  Tape& tape = tape_of(qkv);
  const Tensor& v = qkv.value();
  require_rank2("causal_attention", "qkv", v);
  if (v.cols() % 3 != 0) {
    throw ShapeError("causal_attention: qkv width " + std::to_string(v.cols()) +
                     " is not a multiple of 3");
  }
  const std::size_t d = v.cols() / 3;
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("causal_attention: " + std::to_string(n_heads) +
                     " heads do not divide width " + std::to_string(d));
  }
  if (v.rows() != n_seq * seq_len) {
    throw ShapeError("causal_attention: qkv " + v.shape().str() + " does not hold " +
                     std::to_string(n_seq) + " sequences of length " + std::to_string(seq_len));
  }
  const kernels::AttentionDims dims{n_seq, seq_len, n_heads, d};
  Tensor out(Shape{n_seq * seq_len, d});
  auto probs = std::make_shared<std::vector<double>>(n_seq * n_heads * seq_len * seq_len);
  kernels::attention_forward(v.ptr(), out.ptr(), probs->data(), dims);
  const std::uint32_t iq = qkv.id;
  return tape.record(std::move(out), {qkv}, [iq, dims, probs](Tape& t, std::uint32_t self) {
    kernels::attention_backward(t.value(iq).ptr(), probs->data(), t.grad(self).ptr(),
                                t.grad(iq).ptr(), dims);
  });
}

Var attach_scalar(Var input, double value, Tensor grad) {
  Tape& tape = tape_of(input);
  if (grad.shape() != input.value().shape()) {
    throw ShapeError("attach_scalar: gradient " + grad.shape().str() + " does not match input " +
                     input.value().shape().str());
  }
  const std::uint32_t ia = input.id;
  return tape.record(Tensor::scalar(value), {input},
                     [ia, grad = std::move(grad)](Tape& t, std::uint32_t self) {
                       const double g = t.grad(self)[0];
                       Tensor& gi = t.grad(ia);
                       for (std::size_t i = 0; i < grad.size(); ++i) gi[i] += g * grad[i];
                     });
}

}  // namespace ckd::ad
