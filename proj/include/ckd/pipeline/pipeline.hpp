#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ckd/data/data.hpp"
#include "ckd/losses/losses.hpp"
#include "ckd/model/model.hpp"

namespace ckd::pipeline {

enum class StepKind { PT, FT, DPT, SFT, DFT };

const char* step_name(StepKind k);
StepKind step_from_name(const std::string& name);
/// PT and DPT train the connector; FT, SFT and DFT the connector, backbone and head.
model::Parts step_parts(StepKind k);
/// PT and DPT read caption pairs, the others instruction pairs.
bool step_uses_captions(StepKind k);
bool step_needs_teacher(StepKind k);

struct StepConfig {
  StepKind kind = StepKind::PT;
  double peak_lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  double warmup_ratio = 0.03;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  losses::LossWeights weights;
  std::uint64_t seed = 0;

  void validate(const std::string& key) const;
};

/// Desk-scale defaults: batch 32 for connector steps, 16 for the others.
StepConfig step_defaults(StepKind k);

/// Linear warmup over ceil(warmup_ratio * total) steps to peak_lr, then cosine
/// decay reaching 0 at step == total.
double lr_at(std::size_t step, std::size_t total, double peak_lr, double warmup_ratio);

/// AdamW over the trainable parameters of a model. Moments are allocated only
/// for tensors that were trainable when the optimizer was created.
class AdamW {
 public:
  AdamW(std::vector<ad::Parameter>& params, double weight_decay = 0.0, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update from Parameter::grad. Throws NumericError naming the
  /// tensor if a gradient is not finite.
  void step(double lr);
  std::size_t steps() const noexcept { return t_; }
  std::size_t tracked() const noexcept { return slots_.size(); }

 private:
  struct Slot {
    ad::Parameter* param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

/// Scales trainable gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::vector<ad::Parameter>& params, double max_norm);

struct MetricRecord {
  std::string step;
  int stage = 0;
  std::size_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  double rg = 0.0;
  double td = 0.0;
  double vd = 0.0;
  double vc = 0.0;
  double grad_norm = 0.0;
};

struct StepResult {
  std::vector<MetricRecord> metrics;
  double wall_seconds = 0.0;  // kept out of the metrics so those reproduce exactly
};

/// Teacher logits for each example, computed once per step.
class TeacherCache {
 public:
  TeacherCache(const model::TinyVlm& teacher, const std::vector<data::Example>& examples,
               double noise, std::size_t batch_size = 64);
  /// Bundle aligned with `batch`, assembled from cached rows.
  losses::LogitBundle bundle(const data::TokenBatch& batch,
                             std::span<const std::size_t> example_ids) const;

 private:
  std::vector<Tensor> logits_;
  std::size_t vocab_ = 0;
};

/// Trains `model` for one step. `teacher` is required exactly for DPT and DFT.
StepResult run_step(model::TinyVlm& model, const model::TinyVlm* teacher, const StepConfig& cfg,
                    const data::Corpus& corpus, double noise, int stage = 0);

struct EncoderPretrainConfig {
  double lr = 3e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 2;
  std::uint64_t seed = 0;
};

/// Patch reconstruction pretraining of the encoder through a throwaway linear
/// decoder. Returns the final mean squared error.
double pretrain_encoder(model::TinyVlm& model, const data::Corpus& corpus, double noise,
                        const EncoderPretrainConfig& cfg);

struct PipelineConfig {
  EncoderPretrainConfig encoder;
  StepConfig pt = step_defaults(StepKind::PT);
  StepConfig ft = step_defaults(StepKind::FT);
  StepConfig dpt = step_defaults(StepKind::DPT);
  StepConfig sft = step_defaults(StepKind::SFT);
  StepConfig dft = step_defaults(StepKind::DFT);

  const StepConfig& step(StepKind k) const;
  StepConfig& step(StepKind k);
  void validate() const;
};

struct TrainResult {
  model::Checkpoint checkpoint;
  std::vector<StepResult> steps;
};

/// Fresh model with its encoder pretrained; the starting point of both
/// training recipes.
model::Checkpoint prepare_model(const model::ModelConfig& config, const PipelineConfig& pcfg,
                                const data::Corpus& corpus, double noise);

/// Encoder pretraining, then PT on caption pairs and FT on instruction pairs.
/// `skip_ft` stops after PT (used by the ablation).
TrainResult train_tinyllava(const model::ModelConfig& config, const PipelineConfig& pcfg,
                            const data::Corpus& corpus, double noise, bool skip_ft = false);

enum class StageMode { full, distill_only };

/// Enforces DPT -> SFT -> DFT order within one distillation stage.
class DistillStage {
 public:
  DistillStage(model::TinyVlm& student, const model::TinyVlm& teacher, StageMode mode);
  StepResult run(StepKind kind, const StepConfig& cfg, const data::Corpus& corpus, double noise,
                 int stage);
  bool finished() const noexcept;

 private:
  model::TinyVlm& student_;
  const model::TinyVlm& teacher_;
  StageMode mode_;
  int done_ = 0;  // number of steps completed in order
};

/// DPT, SFT (skipped under distill_only) and DFT against a fixed teacher.
TrainResult train_llavakd_stage(const model::Checkpoint& student, const model::Checkpoint& teacher,
                                const std::string& teacher_id, const PipelineConfig& pcfg,
                                const data::Corpus& corpus, double noise, int stage,
                                StageMode mode = StageMode::full);

/// One JSON object per line; numbers in shortest round-trip form.
void write_metrics_jsonl(std::ostream& os, const std::vector<MetricRecord>& records);

}  // namespace ckd::pipeline
