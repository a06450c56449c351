#include "ckd/pipeline/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <ostream>

#include "ckd/autodiff/ops.hpp"
#include "ckd/util/error.hpp"

namespace ckd::pipeline {

using model::Part;

namespace {
constexpr const char* kStepNames[] = {"PT", "FT", "DPT", "SFT", "DFT"};
}

const char* step_name(StepKind k) { return kStepNames[static_cast<int>(k)]; }

StepKind step_from_name(const std::string& name) {
  for (int k = 0; k < 5; ++k) {
    if (name == kStepNames[k]) return static_cast<StepKind>(k);
  }
  throw ConfigError("step", "unknown step '" + name + "'");
}

model::Parts step_parts(StepKind k) {
  if (k == StepKind::PT || k == StepKind::DPT) return Part::connector;
  return Part::connector | Part::backbone | Part::head;
}

bool step_uses_captions(StepKind k) { return k == StepKind::PT || k == StepKind::DPT; }
bool step_needs_teacher(StepKind k) { return k == StepKind::DPT || k == StepKind::DFT; }

void StepConfig::validate(const std::string& key) const {
  if (!(peak_lr > 0.0)) throw ConfigError(key + ".lr", "must be positive");
  if (batch_size == 0) throw ConfigError(key + ".batch_size", "must be positive");
  if (epochs == 0) throw ConfigError(key + ".epochs", "must be positive");
  if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError(key + ".warmup_ratio", "must lie in (0, 1)");
  }
  if (weight_decay < 0.0) throw ConfigError(key + ".weight_decay", "must be nonnegative");
  if (!(clip_norm > 0.0)) throw ConfigError(key + ".clip_norm", "must be positive");
  if (weights.tau1 < 0 || weights.tau2 < 0 || weights.tau3 < 0) {
    throw ConfigError(key + ".weights", "tau1, tau2, tau3 must be nonnegative");
  }
  if (!(weights.temperature > 0.0)) throw ConfigError(key + ".temperature", "must be positive");
}

StepConfig step_defaults(StepKind k) {
  StepConfig c;
  c.kind = k;
  c.batch_size = step_uses_captions(k) ? 32 : 16;
  c.peak_lr = 1e-3;
  return c;
}

double lr_at(std::size_t step, std::size_t total, double peak_lr, double warmup_ratio) {
  if (step > total) {
    throw Error("lr_at: step " + std::to_string(step) + " beyond total " + std::to_string(total));
  }
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total)));
  if (step < warmup) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return peak_lr;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<ad::Parameter>& params, double weight_decay, double beta1, double beta2,
             double eps)
    : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (ad::Parameter& p : params) {
    if (!p.trainable) continue;
    slots_.push_back({&p, std::vector<double>(p.value.size()), std::vector<double>(p.value.size())});
  }
}

void AdamW::step(double lr) {
  for (const Slot& s : slots_) {
    if (s.param->grad.empty()) continue;
    for (double g : s.param->grad.data()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + s.param->name);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (Slot& s : slots_) {
    auto w = s.param->value.data();
    const bool has_grad = !s.param->grad.empty();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has_grad ? s.param->grad[i] : 0.0;
      s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g;
      s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g * g;
      const double mhat = s.m[i] / c1, vhat = s.v[i] / c2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
    }
  }
}

double clip_grad_norm(std::vector<ad::Parameter>& params, double max_norm) {
  double sq = 0.0;
  for (const ad::Parameter& p : params) {
    if (!p.trainable) continue;
    for (double g : p.grad.data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (ad::Parameter& p : params) {
      if (!p.trainable) continue;
      for (double& g : p.grad.data()) g *= k;
    }
  }
  return norm;
}

TeacherCache::TeacherCache(const model::TinyVlm& teacher, const std::vector<data::Example>& examples,
                           double noise, std::size_t batch_size)
    : vocab_(teacher.config().vocab_size) {
  logits_.resize(examples.size());
  for (std::size_t lo = 0; lo < examples.size(); lo += batch_size) {
    const std::size_t hi = std::min(examples.size(), lo + batch_size);
    std::vector<const data::Example*> ptrs;
    for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&examples[i]);
    const data::TokenBatch b = data::make_batch(ptrs, noise);
    const losses::LogitBundle out = teacher.forward(b);
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t len = examples[i].length();
      Tensor t(Shape{len, vocab_});
      const double* src = out.logits.ptr() + (i - lo) * b.seq_len * vocab_;
      std::copy(src, src + len * vocab_, t.ptr());
      logits_[i] = std::move(t);
    }
  }
}

losses::LogitBundle TeacherCache::bundle(const data::TokenBatch& batch,
                                         std::span<const std::size_t> ids) const {
  Tensor z(Shape{batch.n_seq * batch.seq_len, vocab_});
  for (std::size_t s = 0; s < ids.size(); ++s) {
    const Tensor& t = logits_[ids[s]];
    std::copy(t.ptr(), t.ptr() + t.size(), z.ptr() + s * batch.seq_len * vocab_);
  }
  return model::make_bundle(batch, std::move(z));
}

StepResult run_step(model::TinyVlm& model, const model::TinyVlm* teacher, const StepConfig& cfg,
                    const data::Corpus& corpus, double noise, int stage) {
  const std::string name = step_name(cfg.kind);
  cfg.validate(name);
  if (step_needs_teacher(cfg.kind) && !teacher) {
    throw Error(name + " is a distillation step and needs a teacher");
  }
  if (!step_needs_teacher(cfg.kind) && teacher) {
    throw Error(name + " does not take a teacher");
  }
  if (teacher) {
    const auto& a = teacher->config();
    const auto& b = model.config();
    if (a.vocab_size != b.vocab_size || a.n_visual != b.n_visual) {
      throw ConfigError("teacher", "vocabulary or visual token count differs from the student");
    }
  }
  const auto& examples = step_uses_captions(cfg.kind) ? corpus.captions : corpus.instructions;
  if (examples.empty()) throw Error(name + ": empty training set");

  const auto t0 = std::chrono::steady_clock::now();
  std::optional<TeacherCache> cache;
  if (teacher) cache.emplace(*teacher, examples, noise);

  model.set_trainable(step_parts(cfg.kind));
  model.zero_grad();
  AdamW opt(model.params(), cfg.weight_decay);

  const std::size_t per_epoch = (examples.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  // The shuffle depends on the dataset, not the step, so SFT and DFT see the
  // same batch order.
  Rng rng(derive_seed(cfg.seed, std::string(step_uses_captions(cfg.kind) ? "captions/" : "instructions/") +
                                    std::to_string(stage)));
  std::vector<std::size_t> order(examples.size());
  StepResult result;
  result.metrics.reserve(total);
  std::size_t iter = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size, ++iter) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      const std::span<const std::size_t> ids(order.data() + lo, hi - lo);
      std::vector<const data::Example*> ptrs;
      for (std::size_t id : ids) ptrs.push_back(&examples[id]);
      const data::TokenBatch batch = data::make_batch(ptrs, noise);

      ad::Tape tape;
      ad::Var logits = model.forward(tape, batch);
      const losses::LogitBundle sb = model::make_bundle(batch, logits.value());
      MetricRecord rec{name, stage, iter};
      ad::Var loss;
      if (cache) {
        const losses::DftLoss d = losses::dft_loss(cache->bundle(batch, ids), sb, cfg.weights);
        rec.loss = d.total;
        rec.rg = d.rg;
        rec.td = d.td;
        rec.vd = d.vd;
        rec.vc = d.vc;
        loss = losses::attach(logits, d);
      } else {
        const losses::LossValue l = losses::autoregressive_loss(sb, cfg.weights.normalization);
        rec.loss = rec.rg = l.value;
        loss = losses::attach(logits, l);
      }
      tape.backward(loss);
      rec.grad_norm = clip_grad_norm(model.params(), cfg.clip_norm);
      rec.lr = lr_at(iter, total, cfg.peak_lr, cfg.warmup_ratio);
      opt.step(rec.lr);
      model.zero_grad();
      result.metrics.push_back(rec);
    }
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

double pretrain_encoder(model::TinyVlm& model, const data::Corpus& corpus, double noise,
                        const EncoderPretrainConfig& cfg) {
  const auto& examples = corpus.captions;
  if (examples.empty()) throw Error("encoder pretraining: no caption scenes");
  const auto& mc = model.config();
  // Throwaway decoder back to pixel space.
  std::vector<ad::Parameter> dec;
  {
    Rng rng(derive_seed(cfg.seed, "encoder-decoder"));
    Tensor w(Shape{mc.d_vision, mc.patch_dim});
    for (double& v : w.data()) v = rng.normal(0.0, 1.0 / std::sqrt(double(mc.d_vision)));
    dec.push_back({"decoder.w", std::move(w), {}, true});
    dec.push_back({"decoder.b", Tensor(Shape{mc.patch_dim}), {}, true});
  }
  model.set_trainable(Part::encoder);
  model.zero_grad();
  AdamW opt(model.params());
  AdamW dopt(dec);
  const std::size_t per_epoch = (examples.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  Rng rng(derive_seed(cfg.seed, "encoder-shuffle"));
  std::vector<std::size_t> order(examples.size());
  double last = 0.0;
  std::size_t iter = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size, ++iter) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      std::vector<const data::Example*> ptrs;
      for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&examples[order[i]]);
      const data::TokenBatch batch = data::make_batch(ptrs, noise);
      ad::Tape tape;
      ad::Var code = model::encode_patches(tape, model, batch);
      ad::Var recon = ad::add_bias(ad::matmul(code, tape.param(dec[0])), tape.param(dec[1]));
      ad::Var target = tape.constant(
          Tensor(Shape{batch.n_seq * batch.n_visual, mc.patch_dim}, batch.patches));
      ad::Var diff = ad::sub(recon, target);
      const double inv = 1.0 / static_cast<double>(diff.value().size());
      ad::Var loss = ad::scale(ad::sum(ad::mul(diff, diff)), inv);
      last = loss.value().item();
      tape.backward(loss);
      const double lr = lr_at(iter, total, cfg.lr, 0.03);
      opt.step(lr);
      dopt.step(lr);
      model.zero_grad();
      for (ad::Parameter& p : dec) p.zero_grad();
    }
  }
  model.set_trainable(model::Parts{});
  return last;
}

const StepConfig& PipelineConfig::step(StepKind k) const {
  switch (k) {
    case StepKind::PT: return pt;
    case StepKind::FT: return ft;
    case StepKind::DPT: return dpt;
    case StepKind::SFT: return sft;
    case StepKind::DFT: return dft;
  }
  return pt;
}

StepConfig& PipelineConfig::step(StepKind k) {
  return const_cast<StepConfig&>(std::as_const(*this).step(k));
}

void PipelineConfig::validate() const {
  for (StepKind k : {StepKind::PT, StepKind::FT, StepKind::DPT, StepKind::SFT, StepKind::DFT}) {
    if (step(k).kind != k) throw ConfigError(std::string("pipeline.") + step_name(k), "step kind mismatch");
    step(k).validate(std::string("pipeline.") + step_name(k));
  }
  if (!(encoder.lr > 0.0) || encoder.batch_size == 0 || encoder.epochs == 0) {
    throw ConfigError("pipeline.encoder", "lr, batch_size and epochs must be positive");
  }
}

namespace {

model::Provenance extend(model::Provenance p, StepKind k, int stage, const std::string& teacher) {
  p.step = step_name(k);
  p.stage = stage;
  p.teacher = teacher;
  p.history.push_back(stage > 0 ? std::string(step_name(k)) + "@" + std::to_string(stage)
                                : std::string(step_name(k)));
  return p;
}

StepConfig seeded(StepConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  return cfg;
}

}  // namespace

model::Checkpoint prepare_model(const model::ModelConfig& config, const PipelineConfig& pcfg,
                                const data::Corpus& corpus, double noise) {
  pcfg.validate();
  model::TinyVlm m = model::build_model(config);
  EncoderPretrainConfig enc = pcfg.encoder;
  enc.seed = derive_seed(config.seed, "encoder");
  pretrain_encoder(m, corpus, noise, enc);
  m.set_trainable(model::Parts{});
  return model::Checkpoint::of(m, model::Provenance{"ENC", 0, "", {"ENC"}});
}

TrainResult train_tinyllava(const model::ModelConfig& config, const PipelineConfig& pcfg,
                            const data::Corpus& corpus, double noise, bool skip_ft) {
  const model::Checkpoint init = prepare_model(config, pcfg, corpus, noise);
  model::TinyVlm m = init.restore();
  TrainResult r;
  model::Provenance prov = init.provenance;
  r.steps.push_back(run_step(m, nullptr, seeded(pcfg.pt, config.seed), corpus, noise));
  prov = extend(prov, StepKind::PT, 0, "");
  if (!skip_ft) {
    r.steps.push_back(run_step(m, nullptr, seeded(pcfg.ft, config.seed), corpus, noise));
    prov = extend(prov, StepKind::FT, 0, "");
  }
  m.set_trainable(model::Parts{});
  r.checkpoint = model::Checkpoint::of(m, prov);
  return r;
}

DistillStage::DistillStage(model::TinyVlm& student, const model::TinyVlm& teacher, StageMode mode)
    : student_(student), teacher_(teacher), mode_(mode) {
  const auto& a = teacher.config();
  const auto& b = student.config();
  if (a.vocab_size != b.vocab_size || a.n_visual != b.n_visual) {
    throw ConfigError("teacher", "teacher and student must share vocabulary and visual token count");
  }
}

StepResult DistillStage::run(StepKind kind, const StepConfig& cfg, const data::Corpus& corpus,
                             double noise, int stage) {
  const std::vector<StepKind> order = mode_ == StageMode::full
                                          ? std::vector{StepKind::DPT, StepKind::SFT, StepKind::DFT}
                                          : std::vector{StepKind::DPT, StepKind::DFT};
  if (done_ >= static_cast<int>(order.size()) || order[done_] != kind) {
    const std::string expected = done_ < static_cast<int>(order.size()) ? step_name(order[done_]) : "nothing";
    throw Error(std::string("distillation stage: cannot run ") + step_name(kind) + " now, expected " +
                expected);
  }
  if (cfg.kind != kind) throw Error("distillation stage: step config kind mismatch");
  StepResult r = run_step(student_, step_needs_teacher(kind) ? &teacher_ : nullptr, cfg, corpus,
                          noise, stage);
  ++done_;
  return r;
}

bool DistillStage::finished() const noexcept {
  return done_ == (mode_ == StageMode::full ? 3 : 2);
}

TrainResult train_llavakd_stage(const model::Checkpoint& student, const model::Checkpoint& teacher,
                                const std::string& teacher_id, const PipelineConfig& pcfg,
                                const data::Corpus& corpus, double noise, int stage,
                                StageMode mode) {
  pcfg.validate();
  model::TinyVlm s = student.restore();
  const model::TinyVlm t = teacher.restore();
  DistillStage st(s, t, mode);
  TrainResult r;
  model::Provenance prov = student.provenance;
  const std::uint64_t seed = s.config().seed;
  for (StepKind k : {StepKind::DPT, StepKind::SFT, StepKind::DFT}) {
    if (mode == StageMode::distill_only && k == StepKind::SFT) continue;
    r.steps.push_back(st.run(k, seeded(pcfg.step(k), seed), corpus, noise, stage));
    prov = extend(prov, k, stage, step_needs_teacher(k) ? teacher_id : "");
  }
  prov.teacher = teacher_id;
  s.set_trainable(model::Parts{});
  r.checkpoint = model::Checkpoint::of(s, prov);
  return r;
}

void write_metrics_jsonl(std::ostream& os, const std::vector<MetricRecord>& records) {
  for (const MetricRecord& r : records) {
    nlohmann::ordered_json j{{"step", r.step}, {"stage", r.stage}, {"iter", r.iter},
                             {"lr", r.lr},     {"loss", r.loss},   {"rg", r.rg},
                             {"td", r.td},     {"vd", r.vd},       {"vc", r.vc},
                             {"grad_norm", r.grad_norm}};
    os << j.dump() << '\n';
  }
}

}  // namespace ckd::pipeline
