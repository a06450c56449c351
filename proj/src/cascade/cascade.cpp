#include "ckd/cascade/cascade.hpp"

#include <cmath>
#include <fstream>
#include <future>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "ckd/util/error.hpp"
#include "ckd/util/rng.hpp"

namespace ckd::cascade {

namespace {

constexpr const char* kStrategyNames[] = {"none", "single_teacher", "bottom_up", "top_down"};

std::size_t checkpoint_size(const model::Checkpoint& c) {
  std::size_t n = 0;
  for (const auto& t : c.tensors) n += t.value.size();
  return n;
}

std::string model_id(const model::Checkpoint& c) { return model::tier_name(c.config.tier); }

StageRecord distil(const model::Checkpoint& student, const std::string& student_id, const Rung& teacher,
                   const pipeline::PipelineConfig& pcfg, const data::Corpus& corpus, double noise,
                   int stage, pipeline::StageMode mode) {
  pipeline::TrainResult r =
      pipeline::train_llavakd_stage(student, teacher.checkpoint, teacher.id, pcfg, corpus, noise, stage, mode);
  return StageRecord{stage, teacher.id, student_id, student, std::move(r.checkpoint), std::move(r.steps)};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
  if (!os) throw Error("failed writing " + path.string());
}

nlohmann::ordered_json record_json(const StageRecord& s) {
  nlohmann::ordered_json steps = nlohmann::ordered_json::array();
  for (const auto& st : s.steps) {
    if (st.metrics.empty()) continue;
    const auto& last = st.metrics.back();
    steps.push_back({{"step", last.step}, {"iterations", st.metrics.size()}, {"final_loss", last.loss},
                     {"final_rg", last.rg}, {"final_td", last.td}, {"final_vd", last.vd},
                     {"final_vc", last.vc}});
  }
  return {{"stage", s.stage},
          {"teacher", s.teacher_id},
          {"student", s.student_id},
          {"input_history", s.input.provenance.history},
          {"output_history", s.output.provenance.history},
          {"steps", steps}};
}

}  // namespace

const char* strategy_name(Strategy s) { return kStrategyNames[static_cast<int>(s)]; }

Strategy strategy_from_name(const std::string& name) {
  for (int i = 0; i < 4; ++i) {
    if (name == kStrategyNames[i]) return static_cast<Strategy>(i);
  }
  throw ConfigError("strategy", "unknown strategy '" + name +
                                    "' (none, single_teacher, bottom_up, top_down)");
}

void CascadePlan::validate() const {
  pipeline.validate();
  // A one-rung bottom-up plan is allowed; it is single-teacher KD.
  const std::size_t need = strategy == Strategy::top_down ? 2 : strategy == Strategy::none ? 0 : 1;
  if (ladder.size() < need) {
    throw ConfigError("plan.ladder", std::string(strategy_name(strategy)) + " needs at least " +
                                         std::to_string(need) + " rung(s), got " +
                                         std::to_string(ladder.size()));
  }
  for (std::size_t i = 1; i < ladder.size(); ++i) {
    if (checkpoint_size(ladder[i].checkpoint) < checkpoint_size(ladder[i - 1].checkpoint)) {
      throw ConfigError("plan.ladder", "rung '" + ladder[i].id + "' is smaller than '" +
                                           ladder[i - 1].id + "'; order the ladder weakest first");
    }
  }
  if (!stage_overrides.empty() && stage_overrides.size() != stage_count()) {
    throw ConfigError("plan.stages", "expected " + std::to_string(stage_count()) +
                                         " stage overrides, got " + std::to_string(stage_overrides.size()));
  }
  for (const auto& o : stage_overrides) o.validate();
}

std::size_t CascadePlan::stage_count() const {
  switch (strategy) {
    case Strategy::none: return 0;
    case Strategy::single_teacher: return 1;
    case Strategy::bottom_up:
    case Strategy::top_down: return ladder.size();
  }
  return 0;
}

const pipeline::PipelineConfig& CascadePlan::stage_config(int stage) const {
  if (stage_overrides.empty()) return pipeline;
  return stage_overrides.at(static_cast<std::size_t>(stage - 1));
}

CascadeResult run_bottom_up(const CascadePlan& plan, const model::Checkpoint& student,
                            const data::Corpus& corpus, double noise) {
  plan.validate();
  CascadeResult r;
  model::Checkpoint current = student;
  int stage = 1;
  for (const Rung& rung : plan.ladder) {
    r.stages.push_back(distil(current, model_id(student), rung, plan.stage_config(stage), corpus,
                              noise, stage, plan.mode));
    current = r.stages.back().output;
    ++stage;
  }
  r.final = std::move(current);
  return r;
}

CascadeResult run_top_down(const CascadePlan& plan, const model::Checkpoint& student,
                           const data::Corpus& corpus, double noise) {
  plan.validate();
  if (plan.ladder.size() < 2) throw ConfigError("plan.ladder", "top_down needs at least 2 rungs");
  CascadeResult r;
  Rung teacher = plan.ladder.back();
  int stage = 1;
  for (std::size_t i = plan.ladder.size() - 1; i-- > 0; ++stage) {
    const Rung& ta = plan.ladder[i];
    r.stages.push_back(distil(ta.checkpoint, ta.id, teacher, plan.stage_config(stage), corpus, noise,
                              stage, plan.mode));
    teacher = Rung{ta.id + "<-" + teacher.id, r.stages.back().output};
  }
  r.stages.push_back(distil(student, model_id(student), teacher, plan.stage_config(stage), corpus,
                            noise, stage, plan.mode));
  r.final = r.stages.back().output;
  return r;
}

CascadeResult run_single_teacher(const CascadePlan& plan, const model::Checkpoint& student,
                                 const data::Corpus& corpus, double noise) {
  plan.validate();
  CascadePlan one = plan;
  one.strategy = Strategy::bottom_up;
  one.ladder = {plan.ladder.back()};
  return run_bottom_up(one, student, corpus, noise);
}

CascadeResult run_plan(const CascadePlan& plan, const model::Checkpoint& student,
                       const data::Corpus& corpus, double noise) {
  switch (plan.strategy) {
    case Strategy::none: plan.validate(); return CascadeResult{student, {}};
    case Strategy::single_teacher: return run_single_teacher(plan, student, corpus, noise);
    case Strategy::bottom_up: return run_bottom_up(plan, student, corpus, noise);
    case Strategy::top_down: return run_top_down(plan, student, corpus, noise);
  }
  throw Error("run_plan: unknown strategy");
}

void write_results(const CascadeResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (const StageRecord& s : result.stages) {
    const auto sub = dir / ("stage_" + std::to_string(s.stage));
    std::filesystem::create_directories(sub);
    model::save_checkpoint(s.output, sub / "checkpoint.ckpt");
    std::ostringstream metrics;
    for (const auto& st : s.steps) pipeline::write_metrics_jsonl(metrics, st.metrics);
    write_file(sub / "metrics.jsonl", metrics.str());
    const auto rec = record_json(s);
    write_file(sub / "record.json", rec.dump(2) + "\n");
    all.push_back(rec);
  }
  model::save_checkpoint(result.final, dir / "final.ckpt");
  write_file(dir / "stages.json", all.dump(2) + "\n");
}

void ExperimentConfig::validate() const {
  pipeline.validate();
  if (ladder.empty()) throw ConfigError("experiment.ladder", "needs at least one tier");
  for (std::size_t i = 1; i < ladder.size(); ++i) {
    if (ladder[i] < ladder[i - 1]) throw ConfigError("experiment.ladder", "tiers must be ordered weakest first");
  }
  if (strategies.empty()) throw ConfigError("experiment.strategies", "needs at least one strategy");
  for (Strategy s : strategies) {
    if (s == Strategy::top_down && ladder.size() < 2) {
      throw ConfigError("experiment.ladder", std::string(strategy_name(s)) + " needs at least 2 tiers");
    }
  }
}

SeedRun run_seed(const ExperimentConfig& cfg, const data::Corpus& corpus, std::uint64_t seed) {
  cfg.validate();
  const data::Vocab vocab = data::make_vocab(cfg.corpus.scene);
  const std::size_t k = data::max_sequence_length(cfg.corpus.scene);
  const std::size_t m = std::size_t{cfg.corpus.scene.grid} * cfg.corpus.scene.grid;
  const double noise = cfg.corpus.scene.noise;
  auto config_of = [&](model::Tier t) { return model::tier_config(t, vocab.size(), k, m, seed); };

  SeedRun out;
  auto add = [&](const std::string& method, Strategy s, model::Checkpoint ckpt) {
    const model::TinyVlm mdl = ckpt.restore();
    out.rows.rows.push_back(
        eval::make_row(method, strategy_name(s), seed, eval::evaluate_all(mdl, corpus, noise)));
    out.checkpoints.push_back(std::move(ckpt));
  };

  CascadePlan plan;
  plan.pipeline = cfg.pipeline;
  plan.mode = cfg.mode;
  for (model::Tier t : cfg.ladder) {
    pipeline::TrainResult r = pipeline::train_tinyllava(config_of(t), cfg.pipeline, corpus, noise);
    plan.ladder.push_back(Rung{model::tier_name(t), r.checkpoint});
    if (cfg.evaluate_ladder) add(model::tier_name(t), Strategy::none, std::move(r.checkpoint));
  }

  const model::ModelConfig student = config_of(model::Tier::student);
  const model::Checkpoint init = pipeline::prepare_model(student, cfg.pipeline, corpus, noise);
  for (Strategy s : cfg.strategies) {
    if (s == Strategy::none) {
      pipeline::TrainResult r = pipeline::train_tinyllava(student, cfg.pipeline, corpus, noise);
      out.cascades.push_back(CascadeResult{r.checkpoint, {}});
      add("student", s, std::move(r.checkpoint));
      continue;
    }
    plan.strategy = s;
    out.cascades.push_back(run_plan(plan, init, corpus, noise));
    add("student", s, out.cascades.back().final);
  }
  return out;
}

eval::ResultTable summarise(const eval::ResultTable& per_seed) {
  eval::ResultTable t = eval::aggregate(per_seed);
  auto mean_row = [&](const std::string& strategy) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (t.rows[i].method == "student" && t.rows[i].strategy == strategy && t.rows[i].seed == "mean") return i;
    }
    return std::nullopt;
  };
  const std::pair<const char*, const char*> deltas[] = {{"single_teacher", "none"},
                                                        {"bottom_up", "single_teacher"},
                                                        {"bottom_up", "top_down"}};
  for (const auto& [a, b] : deltas) {
    const auto ia = mean_row(a), ib = mean_row(b);
    if (ia && ib) eval::append_delta(t, *ia, *ib, "student");
  }
  if (mean_row("bottom_up") && mean_row("top_down")) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    const eval::SplitScores none{nan, nan, nan, nan};
    t.rows.push_back({"reference", "top_down", "published", none, kReferenceTopDownAvg / 100.0});
    t.rows.push_back({"reference", "bottom_up", "published", none, kReferenceBottomUpAvg / 100.0});
  }
  return t;
}

Comparison compare_strategies(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                              std::size_t jobs) {
  cfg.validate();
  if (seeds.empty()) throw ConfigError("seeds", "need at least one seed");
  const data::Corpus corpus = data::build_corpus(cfg.corpus);
  std::vector<eval::ResultTable> tables(seeds.size());
  jobs = std::max<std::size_t>(1, jobs);
  for (std::size_t lo = 0; lo < seeds.size(); lo += jobs) {
    std::vector<std::future<eval::ResultTable>> running;
    for (std::size_t i = lo; i < std::min(seeds.size(), lo + jobs); ++i) {
      running.push_back(std::async(std::launch::async,
                                   [&, i] { return run_seed(cfg, corpus, seeds[i]).rows; }));
    }
    for (std::size_t i = 0; i < running.size(); ++i) tables[lo + i] = running[i].get();
  }
  Comparison c;
  for (const auto& t : tables) c.per_seed.rows.insert(c.per_seed.rows.end(), t.rows.begin(), t.rows.end());
  c.summary = summarise(c.per_seed);
  return c;
}

}  // namespace ckd::cascade
