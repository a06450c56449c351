#include "ckd/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ckd/util/error.hpp"

namespace ckd::losses {

namespace {

// Row-wise log-softmax of x / temperature.
void log_softmax_row(std::span<const double> x, double temperature, std::vector<double>& out) {
  out.resize(x.size());
  double mx = -INFINITY;
  for (double v : x) mx = std::max(mx, v / temperature);
  double s = 0.0;
  for (double v : x) s += std::exp(v / temperature - mx);
  const double lse = mx + std::log(s);
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = x[j] / temperature - lse;
}

void check_pair(const LogitBundle& t, const LogitBundle& s, const char* op) {
  t.validate();
  s.validate();
  if (!(t.logits.shape() == s.logits.shape()) || t.n_seq != s.n_seq || t.seq_len != s.seq_len ||
      t.n_visual != s.n_visual) {
    throw ShapeError(std::string(op) + ": teacher logits " + t.logits.shape().str() + " m=" +
                     std::to_string(t.n_visual) + " vs student " + s.logits.shape().str() +
                     " m=" + std::to_string(s.n_visual));
  }
  if (t.relevance != s.relevance) {
    throw ShapeError(std::string(op) + ": teacher and student relevance masks differ");
  }
}

double scale_for(Normalization norm, std::size_t count) {
  return norm == Normalization::raw_sum || count == 0 ? 1.0 : 1.0 / static_cast<double>(count);
}

// Visual logits of one sequence as rows (m x c), irrelevant rows zeroed.
std::vector<double> visual_rows(const LogitBundle& b, std::size_t seq) {
  const std::size_t c = b.vocab();
  std::vector<double> z(b.n_visual * c, 0.0);
  for (std::size_t i = 0; i < b.n_visual; ++i) {
    const std::size_t r = b.row(seq, i);
    if (!b.relevance[r]) continue;
    std::copy_n(b.logits.row(r).begin(), c, z.begin() + i * c);
  }
  return z;
}

std::vector<double> gram_of(const std::vector<double>& z, std::size_t m, std::size_t c) {
  std::vector<double> g(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) acc += z[i * c + k] * z[j * c + k];
      g[i * m + j] = acc;
      g[j * m + i] = acc;
    }
  }
  return g;
}

}  // namespace

void LogitBundle::validate() const {
  if (logits.shape().rank() != 2) {
    throw ShapeError("LogitBundle: logits must be rank 2, got " + logits.shape().str());
  }
  if (logits.rows() != positions()) {
    throw ShapeError("LogitBundle: logits " + logits.shape().str() + " for " +
                     std::to_string(n_seq) + " sequences of length " + std::to_string(seq_len));
  }
  if (relevance.size() != positions() || targets.size() != positions()) {
    throw ShapeError("LogitBundle: relevance/targets length " + std::to_string(relevance.size()) +
                     "/" + std::to_string(targets.size()) + ", expected " +
                     std::to_string(positions()));
  }
  if (n_visual > seq_len) {
    throw ShapeError("LogitBundle: m=" + std::to_string(n_visual) + " exceeds sequence length " +
                     std::to_string(seq_len));
  }
  for (std::int32_t t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab()) {
      throw ShapeError("LogitBundle: target class " + std::to_string(t) + " outside vocabulary " +
                       std::to_string(vocab()));
    }
  }
}

LossValue autoregressive_loss(const LogitBundle& b, Normalization norm) {
  b.validate();
  const std::size_t c = b.vocab();
  LossValue out{0.0, Tensor(b.logits.shape())};
  std::vector<double> lp;
  std::size_t count = 0;
  for (std::size_t s = 0; s < b.n_seq; ++s) {
    for (std::size_t i = b.n_visual; i + 1 < b.seq_len; ++i) {
      const std::size_t r = b.row(s, i);
      if (b.relevance[r]) ++count;
    }
  }
  if (count == 0) throw NumericError("autoregressive_loss: empty loss support");
  const double k = scale_for(norm, count);
  for (std::size_t s = 0; s < b.n_seq; ++s) {
    for (std::size_t i = b.n_visual; i + 1 < b.seq_len; ++i) {
      const std::size_t r = b.row(s, i);
      if (!b.relevance[r]) continue;
      const auto target = static_cast<std::size_t>(b.targets[r + 1]);
      log_softmax_row(b.logits.row(r), 1.0, lp);
      out.value -= lp[target];
      auto g = out.grad.row(r);
      for (std::size_t j = 0; j < c; ++j) g[j] = k * std::exp(lp[j]);
      g[target] -= k;
    }
  }
  out.value *= k;
  return out;
}

LossValue kd_kl_loss(const LogitBundle& teacher, const LogitBundle& student, Modality range,
                     double temperature, Normalization norm) {
  check_pair(teacher, student, "kd_kl_loss");
  if (!(temperature > 0.0)) throw ConfigError("temperature", "must be positive");
  const std::size_t c = student.vocab();
  const std::size_t lo = range == Modality::visual ? 0 : student.n_visual;
  const std::size_t hi = range == Modality::visual ? student.n_visual : student.seq_len;
  LossValue out{0.0, Tensor(student.logits.shape())};
  std::size_t count = 0;
  for (std::size_t s = 0; s < student.n_seq; ++s) {
    for (std::size_t i = lo; i < hi; ++i) count += student.relevance[student.row(s, i)];
  }
  if (count == 0) return out;
  const double k = scale_for(norm, count);
  std::vector<double> lp, lq;
  for (std::size_t s = 0; s < student.n_seq; ++s) {
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t r = student.row(s, i);
      if (!student.relevance[r]) continue;
      log_softmax_row(teacher.logits.row(r), temperature, lp);
      log_softmax_row(student.logits.row(r), temperature, lq);
      double kl = 0.0;
      auto g = out.grad.row(r);
      for (std::size_t j = 0; j < c; ++j) {
        const double p = std::exp(lp[j]);
        if (p > 0.0) kl += p * (lp[j] - lq[j]);
        g[j] = k * (std::exp(lq[j]) - p) / temperature;
      }
      out.value += kl;
    }
  }
  out.value *= k;
  return out;
}

Tensor visual_gram(const LogitBundle& b, std::size_t seq) {
  b.validate();
  if (b.n_visual == 0) throw ShapeError("visual_gram: no visual tokens");
  if (seq >= b.n_seq) {
    throw ShapeError("visual_gram: sequence " + std::to_string(seq) + " of " +
                     std::to_string(b.n_seq));
  }
  const std::size_t m = b.n_visual;
  return Tensor(Shape{m, m}, gram_of(visual_rows(b, seq), m, b.vocab()));
}

LossValue visual_cosine_loss(const LogitBundle& teacher, const LogitBundle& student,
                             Normalization norm) {
  check_pair(teacher, student, "visual_cosine_loss");
  if (student.n_visual == 0) throw ShapeError("visual_cosine_loss: no visual tokens");
  const std::size_t m = student.n_visual, c = student.vocab();
  LossValue out{0.0, Tensor(student.logits.shape())};
  const double k = scale_for(norm, student.n_seq);
  for (std::size_t s = 0; s < student.n_seq; ++s) {
    const std::vector<double> a = gram_of(visual_rows(teacher, s), m, c);
    const std::vector<double> x = visual_rows(student, s);
    const std::vector<double> b = gram_of(x, m, c);
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < m * m; ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    if (!(aa > 0.0) || !(bb > 0.0)) {
      throw NumericError("visual_cosine_loss: degenerate visual logits in sequence " +
                         std::to_string(s));
    }
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    const double cos = ab / (na * nb);
    out.value += 1.0 - std::clamp(cos, -1.0, 1.0);

    // dL/dB = -(A / (|A||B|) - cos B / |B|^2); B = X X^T so dX = 2 dB X.
    std::vector<double> db(m * m);
    for (std::size_t i = 0; i < m * m; ++i) db[i] = -(a[i] / (na * nb) - cos * b[i] / bb);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t r = student.row(s, i);
      if (!student.relevance[r]) continue;
      auto g = out.grad.row(r);
      for (std::size_t j = 0; j < m; ++j) {
        const double w = 2.0 * k * db[i * m + j];
        if (w == 0.0) continue;
        for (std::size_t q = 0; q < c; ++q) g[q] += w * x[j * c + q];
      }
    }
  }
  out.value *= k;
  return out;
}

DftLoss dft_loss(const LogitBundle& teacher, const LogitBundle& student, const LossWeights& w) {
  if (w.tau1 < 0.0 || w.tau2 < 0.0 || w.tau3 < 0.0) {
    throw ConfigError("loss_weights", "tau1, tau2, tau3 must be nonnegative");
  }
  check_pair(teacher, student, "dft_loss");
  DftLoss out;
  LossValue rg = autoregressive_loss(student, w.normalization);
  LossValue td = kd_kl_loss(teacher, student, Modality::text, w.temperature, w.normalization);
  out.rg = rg.value;
  out.td = td.value;
  out.grad = std::move(rg.grad);
  auto accumulate = [&](const Tensor& g, double tau) {
    if (tau == 0.0) return;
    auto dst = out.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += tau * src[i];
  };
  accumulate(td.grad, w.tau1);
  if (student.n_visual > 0) {
    LossValue vd =
        kd_kl_loss(teacher, student, Modality::visual, w.temperature, w.normalization);
    LossValue vc = visual_cosine_loss(teacher, student, w.normalization);
    out.vd = vd.value;
    out.vc = vc.value;
    accumulate(vd.grad, w.tau2);
    accumulate(vc.grad, w.tau3);
  }
  out.total = out.rg + w.tau1 * out.td + w.tau2 * out.vd + w.tau3 * out.vc;
  return out;
}

ad::Var attach(ad::Var logits, const LossValue& loss) {
  return ad::attach_scalar(logits, loss.value, loss.grad);
}

ad::Var attach(ad::Var logits, const DftLoss& loss) {
  return ad::attach_scalar(logits, loss.total, loss.grad);
}

}  // namespace ckd::losses
