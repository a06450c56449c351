#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ckd/autodiff/ops.hpp"
#include "ckd/autodiff/tensor.hpp"

namespace ckd::losses {

/// Per-position logits of one forward pass over a batch of sequences.
///
/// Positions are laid out sequence-major: row `b * seq_len + i` holds z_i of
/// sequence b. The first `n_visual` positions of every sequence are visual
/// tokens, the rest are text. `targets[p]` is the token class of position p,
/// so the one-hot vector y_p has a single 1 at that index.
///
/// `relevance[p]` marks logit vectors that take part in learning. A relevant
/// text position i predicts the supervised token at i + 1; prompt and padding
/// positions are irrelevant. Irrelevant positions contribute nothing to any
/// loss and receive zero gradient.
struct LogitBundle {
  Tensor logits;
  std::size_t n_seq = 0;
  std::size_t seq_len = 0;
  std::size_t n_visual = 0;
  std::vector<std::uint8_t> relevance;
  std::vector<std::int32_t> targets;

  std::size_t vocab() const noexcept { return logits.cols(); }
  std::size_t positions() const noexcept { return n_seq * seq_len; }
  std::size_t row(std::size_t seq, std::size_t pos) const noexcept { return seq * seq_len + pos; }
  /// Throws ShapeError if fields disagree with each other.
  void validate() const;
};

enum class Modality { visual, text };

/// How each loss turns its per-position sum into a value.
enum class Normalization {
  mean,      // divide by the number of contributing positions (default)
  raw_sum,   // the literal sums, no division
};

struct LossWeights {
  double tau1 = 1.0;  // text KL
  double tau2 = 1.0;  // visual KL
  double tau3 = 1.0;  // visual cosine divergence
  double temperature = 1.0;
  Normalization normalization = Normalization::mean;
};

/// Scalar loss and its gradient with respect to the student logits.
struct LossValue {
  double value = 0.0;
  Tensor grad;
};

/// Next-token cross entropy, -sum_i sum_j y_{i+1,j} ln softmax(z_i)_j, over
/// relevant text positions i with i + 1 inside the sequence.
/// Throws NumericError("empty loss support") when nothing contributes.
LossValue autoregressive_loss(const LogitBundle& bundle,
                              Normalization norm = Normalization::mean);

/// KL(teacher || student) between temperature-softmaxed distributions,
/// summed over relevant positions of one modality. The teacher is a constant.
LossValue kd_kl_loss(const LogitBundle& teacher, const LogitBundle& student, Modality range,
                     double temperature = 1.0, Normalization norm = Normalization::mean);

/// G = Z^T Z for the visual logits of one sequence, Z = [z_1 .. z_m] (c x m).
/// Irrelevant visual positions enter as zero columns.
Tensor visual_gram(const LogitBundle& bundle, std::size_t seq = 0);

/// 1 - cos(vec(G_teacher), vec(G_student)) per sequence, averaged over the
/// batch (summed under raw_sum). Throws NumericError on a zero Gram matrix.
LossValue visual_cosine_loss(const LogitBundle& teacher, const LogitBundle& student,
                             Normalization norm = Normalization::mean);

struct DftLoss {
  double total = 0.0;
  double rg = 0.0;
  double td = 0.0;
  double vd = 0.0;
  double vc = 0.0;
  Tensor grad;
};

/// L_rg + tau1 L_td + tau2 L_vd + tau3 L_vc with each term reported.
/// Visual terms are zero when the bundles carry no visual tokens.
DftLoss dft_loss(const LogitBundle& teacher, const LogitBundle& student, const LossWeights& w);

/// Put an analytically differentiated loss on the tape above `logits`.
ad::Var attach(ad::Var logits, const LossValue& loss);
ad::Var attach(ad::Var logits, const DftLoss& loss);

}  // namespace ckd::losses
