#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ckd/data/data.hpp"
#include "ckd/eval/eval.hpp"
#include "ckd/model/model.hpp"
#include "ckd/pipeline/pipeline.hpp"

namespace ckd::cascade {

enum class Strategy { none, single_teacher, bottom_up, top_down };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

/// A trained teacher checkpoint with a stable identifier.
struct Rung {
  std::string id;
  model::Checkpoint checkpoint;
};

struct CascadePlan {
  Strategy strategy = Strategy::bottom_up;
  std::vector<Rung> ladder;  // weakest first
  pipeline::PipelineConfig pipeline;
  /// Per-stage step configs; empty means `pipeline` for every stage,
  /// otherwise one entry per stage.
  std::vector<pipeline::PipelineConfig> stage_overrides;
  pipeline::StageMode mode = pipeline::StageMode::full;

  /// Throws ConfigError: top_down needs two rungs, bottom_up and
  /// single_teacher one, and the ladder must not decrease in parameter count.
  void validate() const;
  std::size_t stage_count() const;
  const pipeline::PipelineConfig& stage_config(int stage) const;
};

struct StageRecord {
  int stage = 0;
  std::string teacher_id;
  std::string student_id;  // which model was trained in this stage
  model::Checkpoint input;
  model::Checkpoint output;
  std::vector<pipeline::StepResult> steps;
};

struct CascadeResult {
  model::Checkpoint final;
  std::vector<StageRecord> stages;
};

/// One stage per rung, weakest to strongest, threading the student through.
CascadeResult run_bottom_up(const CascadePlan& plan, const model::Checkpoint& student,
                            const data::Corpus& corpus, double noise);

/// Strongest rung distils the next one down, which after its own
/// distillation teaches the one below, and so on; the student is distilled
/// once, by the distilled weakest rung.
CascadeResult run_top_down(const CascadePlan& plan, const model::Checkpoint& student,
                           const data::Corpus& corpus, double noise);

/// KD from the strongest rung alone; the same code path as a one-rung
/// bottom-up cascade.
CascadeResult run_single_teacher(const CascadePlan& plan, const model::Checkpoint& student,
                                 const data::Corpus& corpus, double noise);

/// Dispatches on plan.strategy. `none` returns the student untouched.
CascadeResult run_plan(const CascadePlan& plan, const model::Checkpoint& student,
                       const data::Corpus& corpus, double noise);

/// Results directory:
///   stage_<i>/checkpoint.ckpt  stage_<i>/metrics.jsonl  stage_<i>/record.json
///   final.ckpt  stages.json
void write_results(const CascadeResult& result, const std::filesystem::path& dir);

/// Seed-replicated comparison of direct training, single-teacher KD and the
/// cascades on one shared corpus.
struct ExperimentConfig {
  data::CorpusConfig corpus;
  pipeline::PipelineConfig pipeline;
  std::vector<model::Tier> ladder{model::Tier::assistant, model::Tier::teacher};
  std::vector<Strategy> strategies{Strategy::none, Strategy::single_teacher, Strategy::bottom_up,
                                   Strategy::top_down};
  bool evaluate_ladder = true;  // also report the directly trained ladder tiers
  pipeline::StageMode mode = pipeline::StageMode::full;

  void validate() const;
};

/// Everything one seed produces: rows labelled (tier, strategy) and the
/// final checkpoints in the same order.
struct SeedRun {
  eval::ResultTable rows;
  std::vector<model::Checkpoint> checkpoints;
  std::vector<CascadeResult> cascades;  // per strategy, empty stages for none
};

SeedRun run_seed(const ExperimentConfig& cfg, const data::Corpus& corpus, std::uint64_t seed);

/// Published reference averages of the top-down vs bottom-up ablation.
inline constexpr double kReferenceBottomUpAvg = 61.8;
inline constexpr double kReferenceTopDownAvg = 61.0;

struct Comparison {
  eval::ResultTable per_seed;
  /// Mean and stdev rows, delta rows between strategies, then the
  /// reference averages (as fractions, split scores NaN).
  eval::ResultTable summary;
};

/// Runs every seed (up to `jobs` concurrently) and summarises. Rows follow
/// seed order whatever the concurrency.
Comparison compare_strategies(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                              std::size_t jobs = 1);

/// Summary over already computed per-seed rows.
eval::ResultTable summarise(const eval::ResultTable& per_seed);

}  // namespace ckd::cascade
