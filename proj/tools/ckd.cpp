#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>

#include "ckd/bounds/bounds.hpp"
#include "ckd/cascade/cascade.hpp"
#include "ckd/config/config.hpp"
#include "ckd/eval/eval.hpp"
#include "ckd/util/error.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using namespace ckd;
using config::Json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Options {
  fs::path config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t seeds = 1;
  std::string format = "md";
  std::size_t jobs = 1;
};

struct Context {
  std::string command;
  Options opt;
  Json cfg;
  fs::path out;
  eval::Format format = eval::Format::markdown;
  std::vector<std::uint64_t> seeds;
  cli::RunManifest manifest;
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw Error("cannot write " + path.string());
}

// results.csv always, plus the same table in --format when that differs.
void emit(const Context& ctx, const eval::ResultTable& table, const std::string& stem) {
  write_text(ctx.out / (stem + ".csv"), eval::render(table, eval::Format::csv));
  if (ctx.format != eval::Format::csv) {
    eval::emit_report(table, ctx.format, ctx.out / (stem + "." + eval::format_extension(ctx.format)));
  }
}

std::uint64_t read_seed(const Json& j) {
  if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<long long>() < 0)) {
    throw ConfigError("seed", "must be a nonnegative integer");
  }
  return j.get<std::uint64_t>();
}

data::CorpusConfig corpus_config(const Context& ctx) {
  return config::parse_corpus(config::require(ctx.cfg, "corpus", ""), "corpus");
}

pipeline::PipelineConfig pipeline_config(const Context& ctx) {
  return ctx.cfg.contains("pipeline") ? config::parse_pipeline(ctx.cfg.at("pipeline"), "pipeline")
                                      : pipeline::PipelineConfig{};
}

model::ModelConfig tier_model(model::Tier tier, const data::CorpusConfig& cc, std::uint64_t seed) {
  return model::tier_config(tier, data::make_vocab(cc.scene).size(), data::max_sequence_length(cc.scene),
                            cc.scene.grid * cc.scene.grid, seed);
}

std::string get_string(const Json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "must be a string");
  return j.get<std::string>();
}

fs::path resolve(const Context& ctx, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : ctx.opt.config.parent_path() / path;
}

model::Checkpoint load_input(Context& ctx, const Json& j, const std::string& path,
                             const data::CorpusConfig& cc) {
  const fs::path file = resolve(ctx, get_string(j, path));
  if (!fs::exists(file)) throw ConfigError(path, "checkpoint not found: " + file.string());
  ctx.manifest.inputs.push_back(file);
  model::Checkpoint ck = model::load_checkpoint(file);
  if (ck.config.vocab_size != data::make_vocab(cc.scene).size() ||
      ck.config.n_visual != std::size_t{cc.scene.grid} * cc.scene.grid) {
    throw ConfigError(path, "checkpoint does not match the corpus vocabulary or grid");
  }
  return ck;
}

pipeline::StageMode parse_mode(const Json& j, const std::string& path) {
  const std::string m = get_string(j, path);
  if (m == "full") return pipeline::StageMode::full;
  if (m == "distill_only") return pipeline::StageMode::distill_only;
  throw ConfigError(path, "must be \"full\" or \"distill_only\"");
}

const char* mode_name(pipeline::StageMode m) { return m == pipeline::StageMode::full ? "full" : "distill_only"; }

// Runs fn(seed) for every seed, at most `jobs` at a time; results keep seed order.
template <typename Fn>
auto for_seeds(const Context& ctx, Fn fn) {
  using R = decltype(fn(std::uint64_t{}));
  std::vector<R> out;
  const std::size_t jobs = std::max<std::size_t>(1, ctx.opt.jobs);
  for (std::size_t i = 0; i < ctx.seeds.size(); i += jobs) {
    std::vector<std::future<R>> batch;
    for (std::size_t j = i; j < std::min(ctx.seeds.size(), i + jobs); ++j) {
      batch.push_back(std::async(std::launch::async, fn, ctx.seeds[j]));
    }
    for (auto& f : batch) out.push_back(f.get());
  }
  return out;
}

fs::path seed_dir(const Context& ctx, std::uint64_t seed) { return ctx.out / ("seed_" + std::to_string(seed)); }

void write_metrics(const fs::path& path, const std::vector<pipeline::StepResult>& steps) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  for (const auto& s : steps) pipeline::write_metrics_jsonl(os, s.metrics);
  if (!os) throw Error("cannot write " + path.string());
}

Json seeds_json(const Context& ctx) { return Json(ctx.seeds); }

void cmd_pretrain(Context& ctx) {
  const data::CorpusConfig cc = corpus_config(ctx);
  const pipeline::PipelineConfig pcfg = pipeline_config(ctx);
  const std::vector<model::Tier> tiers =
      ctx.cfg.contains("tiers") ? config::parse_tiers(ctx.cfg.at("tiers"), "tiers")
                                : std::vector<model::Tier>{model::Tier::student, model::Tier::assistant,
                                                           model::Tier::teacher};
  Json names = Json::array();
  for (auto t : tiers) names.push_back(model::tier_name(t));
  ctx.manifest.resolved = {{"corpus", config::snapshot(cc)},
                           {"pipeline", config::snapshot(pcfg)},
                           {"tiers", names},
                           {"seeds", seeds_json(ctx)}};

  const data::Corpus corpus = data::build_corpus(cc);
  const double noise = cc.scene.noise;
  const auto per_seed = for_seeds(ctx, [&](std::uint64_t seed) {
    std::vector<eval::ResultRow> rows;
    for (model::Tier t : tiers) {
      const pipeline::TrainResult r = pipeline::train_tinyllava(tier_model(t, cc, seed), pcfg, corpus, noise);
      const fs::path dir = seed_dir(ctx, seed) / model::tier_name(t);
      fs::create_directories(dir);
      model::save_checkpoint(r.checkpoint, dir / "checkpoint.ckpt");
      write_metrics(dir / "metrics.jsonl", r.steps);
      rows.push_back(eval::make_row(model::tier_name(t), "none", seed,
                                    eval::evaluate_all(r.checkpoint.restore(), corpus, noise)));
    }
    return rows;
  });
  eval::ResultTable table;
  for (const auto& rows : per_seed) table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  emit(ctx, table, "results");
  if (ctx.seeds.size() > 1) emit(ctx, eval::aggregate(table), "summary");
}

struct StudentSpec {
  std::optional<model::Checkpoint> checkpoint;
  model::Tier tier = model::Tier::student;
};

// The shared body of distill and cascade: one plan per seed, results per seed.
void run_plan_command(Context& ctx, cascade::CascadePlan plan, const StudentSpec& student,
                      const data::CorpusConfig& cc, Json resolved_plan) {
  plan.validate();
  ctx.manifest.resolved = {{"corpus", config::snapshot(cc)},
                           {"pipeline", config::snapshot(plan.pipeline)},
                           {"plan", std::move(resolved_plan)},
                           {"seeds", seeds_json(ctx)}};
  const data::Corpus corpus = data::build_corpus(cc);
  const double noise = cc.scene.noise;
  const std::string method = model::tier_name(student.checkpoint ? student.checkpoint->config.tier : student.tier);
  const auto rows = for_seeds(ctx, [&](std::uint64_t seed) {
    const model::Checkpoint init = student.checkpoint
                                       ? *student.checkpoint
                                       : pipeline::prepare_model(tier_model(student.tier, cc, seed), plan.pipeline,
                                                                 corpus, noise);
    const cascade::CascadeResult r = cascade::run_plan(plan, init, corpus, noise);
    cascade::write_results(r, seed_dir(ctx, seed));
    return eval::make_row(method, cascade::strategy_name(plan.strategy), seed,
                          eval::evaluate_all(r.final.restore(), corpus, noise));
  });
  eval::ResultTable table{rows};
  emit(ctx, table, "results");
  if (ctx.seeds.size() > 1) emit(ctx, eval::aggregate(table), "summary");
}

StudentSpec parse_student(Context& ctx, const Json& section, const std::string& path, const data::CorpusConfig& cc,
                          Json& resolved) {
  StudentSpec s;
  if (section.contains("student")) {
    s.checkpoint = load_input(ctx, section.at("student"), path + ".student", cc);
    resolved["student"] = section.at("student");
  }
  if (section.contains("student_tier")) {
    if (s.checkpoint) throw ConfigError(path + ".student_tier", "conflicts with " + path + ".student");
    try {
      s.tier = model::tier_from_name(get_string(section.at("student_tier"), path + ".student_tier"));
    } catch (const ConfigError& e) {
      if (e.key_path() != "tier") throw;
      throw ConfigError(path + ".student_tier", "must be student, assistant or teacher");
    }
  }
  if (!s.checkpoint) resolved["student_tier"] = model::tier_name(s.tier);
  return s;
}

void cmd_distill(Context& ctx) {
  const data::CorpusConfig cc = corpus_config(ctx);
  const Json& d = config::require(ctx.cfg, "distill", "");
  if (!d.is_object()) throw ConfigError("distill", "must be an object");
  config::check_keys(d, {"teacher", "teacher_id", "student", "student_tier", "mode"}, "distill");
  cascade::CascadePlan plan;
  plan.strategy = cascade::Strategy::single_teacher;
  plan.pipeline = pipeline_config(ctx);
  Json resolved;
  const std::string id = d.contains("teacher_id") ? get_string(d.at("teacher_id"), "distill.teacher_id") : "teacher";
  plan.ladder.push_back({id, load_input(ctx, config::require(d, "teacher", "distill"), "distill.teacher", cc)});
  resolved["strategy"] = "single_teacher";
  resolved["ladder"] = Json::array({{{"id", id}, {"checkpoint", d.at("teacher")}}});
  if (d.contains("mode")) plan.mode = parse_mode(d.at("mode"), "distill.mode");
  resolved["mode"] = mode_name(plan.mode);
  const StudentSpec student = parse_student(ctx, d, "distill", cc, resolved);
  run_plan_command(ctx, std::move(plan), student, cc, std::move(resolved));
}

void cmd_cascade(Context& ctx) {
  const data::CorpusConfig cc = corpus_config(ctx);
  const Json& p = config::require(ctx.cfg, "plan", "");
  if (!p.is_object()) throw ConfigError("plan", "must be an object");
  config::check_keys(p, {"strategy", "ladder", "student", "student_tier", "mode", "stage_overrides"}, "plan");
  cascade::CascadePlan plan;
  plan.pipeline = pipeline_config(ctx);
  plan.strategy = cascade::strategy_from_name(get_string(config::require(p, "strategy", "plan"), "plan.strategy"));
  Json resolved;
  resolved["strategy"] = cascade::strategy_name(plan.strategy);
  resolved["ladder"] = Json::array();
  if (p.contains("ladder")) {
    const Json& l = p.at("ladder");
    if (!l.is_array()) throw ConfigError("plan.ladder", "must be an array");
    for (std::size_t i = 0; i < l.size(); ++i) {
      const std::string path = "plan.ladder[" + std::to_string(i) + "]";
      if (!l[i].is_object()) throw ConfigError(path, "must be an object with id and checkpoint");
      config::check_keys(l[i], {"id", "checkpoint"}, path);
      const std::string id = get_string(config::require(l[i], "id", path), path + ".id");
      plan.ladder.push_back({id, load_input(ctx, config::require(l[i], "checkpoint", path), path + ".checkpoint", cc)});
      resolved["ladder"].push_back({{"id", id}, {"checkpoint", l[i].at("checkpoint")}});
    }
  }
  if (p.contains("mode")) plan.mode = parse_mode(p.at("mode"), "plan.mode");
  resolved["mode"] = mode_name(plan.mode);
  if (p.contains("stage_overrides")) {
    const Json& o = p.at("stage_overrides");
    if (!o.is_array()) throw ConfigError("plan.stage_overrides", "must be an array");
    resolved["stage_overrides"] = Json::array();
    for (std::size_t i = 0; i < o.size(); ++i) {
      plan.stage_overrides.push_back(
          config::parse_pipeline(o[i], "plan.stage_overrides[" + std::to_string(i) + "]"));
      resolved["stage_overrides"].push_back(config::snapshot(plan.stage_overrides.back()));
    }
  }
  const StudentSpec student = parse_student(ctx, p, "plan", cc, resolved);
  run_plan_command(ctx, std::move(plan), student, cc, std::move(resolved));
}

void cmd_ablate(Context& ctx) {
  cascade::ExperimentConfig e;
  e.corpus = corpus_config(ctx);
  e.pipeline = pipeline_config(ctx);
  if (ctx.cfg.contains("experiment")) {
    const Json& x = ctx.cfg.at("experiment");
    if (!x.is_object()) throw ConfigError("experiment", "must be an object");
    config::check_keys(x, {"ladder", "strategies", "evaluate_ladder", "mode"}, "experiment");
    if (x.contains("ladder")) e.ladder = config::parse_tiers(x.at("ladder"), "experiment.ladder");
    if (x.contains("strategies")) {
      const Json& s = x.at("strategies");
      if (!s.is_array() || s.empty()) throw ConfigError("experiment.strategies", "must be a nonempty array");
      e.strategies.clear();
      for (std::size_t i = 0; i < s.size(); ++i) {
        const std::string path = "experiment.strategies[" + std::to_string(i) + "]";
        try {
          e.strategies.push_back(cascade::strategy_from_name(get_string(s[i], path)));
        } catch (const ConfigError& err) {
          if (err.key_path() == path) throw;
          throw ConfigError(path, "must be none, single_teacher, bottom_up or top_down");
        }
      }
    }
    if (x.contains("evaluate_ladder")) {
      if (!x.at("evaluate_ladder").is_boolean()) throw ConfigError("experiment.evaluate_ladder", "must be true or false");
      e.evaluate_ladder = x.at("evaluate_ladder").get<bool>();
    }
    if (x.contains("mode")) e.mode = parse_mode(x.at("mode"), "experiment.mode");
  }
  e.validate();
  Json ladder = Json::array(), strategies = Json::array();
  for (auto t : e.ladder) ladder.push_back(model::tier_name(t));
  for (auto s : e.strategies) strategies.push_back(cascade::strategy_name(s));
  ctx.manifest.resolved = {{"corpus", config::snapshot(e.corpus)},
                           {"pipeline", config::snapshot(e.pipeline)},
                           {"experiment",
                            {{"ladder", ladder},
                             {"strategies", strategies},
                             {"evaluate_ladder", e.evaluate_ladder},
                             {"mode", mode_name(e.mode)}}},
                           {"seeds", seeds_json(ctx)}};
  const cascade::Comparison c = cascade::compare_strategies(e, ctx.seeds, ctx.opt.jobs);
  emit(ctx, c.per_seed, "per_seed");
  emit(ctx, c.summary, "summary");
  std::cout << eval::render(c.summary, eval::Format::markdown);
}

void cmd_eval(Context& ctx) {
  const data::CorpusConfig cc = corpus_config(ctx);
  const Json& e = config::require(ctx.cfg, "eval", "");
  if (!e.is_object()) throw ConfigError("eval", "must be an object");
  config::check_keys(e, {"checkpoints"}, "eval");
  const Json& list = config::require(e, "checkpoints", "eval");
  if (!list.is_array() || list.empty()) throw ConfigError("eval.checkpoints", "must be a nonempty array");
  const data::Corpus corpus = data::build_corpus(cc);
  eval::ResultTable table;
  Json resolved = Json::array();
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string path = "eval.checkpoints[" + std::to_string(i) + "]";
    if (!list[i].is_object()) throw ConfigError(path, "must be an object with id and path");
    config::check_keys(list[i], {"id", "path"}, path);
    const std::string id = get_string(config::require(list[i], "id", path), path + ".id");
    const model::Checkpoint ck = load_input(ctx, config::require(list[i], "path", path), path + ".path", cc);
    table.rows.push_back(eval::make_row(id, "checkpoint", ck.config.seed,
                                        eval::evaluate_all(ck.restore(), corpus, cc.scene.noise)));
    resolved.push_back({{"id", id}, {"path", list[i].at("path")}});
  }
  ctx.manifest.resolved = {{"corpus", config::snapshot(cc)}, {"eval", {{"checkpoints", resolved}}}};
  emit(ctx, table, "results");
}

void cmd_report(Context& ctx) {
  const Json& r = config::require(ctx.cfg, "report", "");
  if (!r.is_object()) throw ConfigError("report", "must be an object");
  config::check_keys(r, {"inputs", "mode"}, "report");
  const Json& inputs = config::require(r, "inputs", "report");
  if (!inputs.is_array() || inputs.empty()) throw ConfigError("report.inputs", "must be a nonempty array");
  const std::string mode = r.contains("mode") ? get_string(r.at("mode"), "report.mode") : "concat";
  if (mode != "concat" && mode != "aggregate" && mode != "summarise") {
    throw ConfigError("report.mode", "must be concat, aggregate or summarise");
  }
  eval::ResultTable table;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::string path = "report.inputs[" + std::to_string(i) + "]";
    const fs::path file = resolve(ctx, get_string(inputs[i], path));
    std::ifstream is(file, std::ios::binary);
    if (!is) throw ConfigError(path, "cannot read " + file.string());
    ctx.manifest.inputs.push_back(file);
    std::ostringstream ss;
    ss << is.rdbuf();
    const eval::ResultTable t = eval::parse_csv(ss.str());
    table.rows.insert(table.rows.end(), t.rows.begin(), t.rows.end());
  }
  if (mode == "aggregate") table = eval::aggregate(table);
  if (mode == "summarise") table = cascade::summarise(table);
  ctx.manifest.resolved = {{"report", {{"inputs", inputs}, {"mode", mode}}}};
  emit(ctx, table, "report");
}

void cmd_bounds(Context& ctx) {
  const bounds::SweepSpec spec = config::parse_sweep(config::require(ctx.cfg, "bounds", ""), "bounds");
  const bounds::SweepResult r = bounds::regime_sweep(spec);
  write_text(ctx.out / "sweep.csv", bounds::sweep_csv(r));
  Json flips = Json::array();
  for (const auto& rec : r.records) {
    if (!rec.flip) continue;
    flips.push_back({{"params", config::snapshot(rec.params)}, {"holds", rec.verdict.holds},
                     {"margin", rec.verdict.margin}});
  }
  Json summary = {{"points", r.records.size()},
                  {"skipped", r.skipped},
                  {"holds_fraction", r.holds_fraction},
                  {"flips", r.flips},
                  {"flip_points", flips}};
  write_text(ctx.out / "summary.json", summary.dump(2) + "\n");
  Json axes;
  axes["params"] = config::snapshot(spec.base);
  axes["n"] = spec.n;
  axes["a_st"] = spec.a_st;
  axes["a_sbart"] = spec.a_sbart;
  axes["c_sbar"] = spec.c_sbar;
  axes["c_t"] = spec.c_t;
  axes["eps_st"] = spec.eps_st;
  axes["eps_sbart"] = spec.eps_sbart;
  axes["k"] = spec.k;
  ctx.manifest.resolved = {{"bounds", axes}};
  std::cout << "points " << r.records.size() << "  skipped " << r.skipped << "  holds_fraction "
            << eval::format_number(r.holds_fraction) << "  flips " << r.flips << "\n";
}

fs::path default_out(const std::string& command, const fs::path& config) {
  const char* root = std::getenv("CKD_OUT_ROOT");
  return fs::path(root && *root ? root : "runs") / command / config.stem();
}

int run(const std::string& command, const Options& opt) {
  Context ctx;
  ctx.command = command;
  ctx.opt = opt;
  ctx.manifest.started_at = cli::utc_now();
  ctx.cfg = config::load(opt.config);
  config::check_keys(ctx.cfg,
                     {"corpus", "pipeline", "seed", "tiers", "distill", "plan", "experiment", "eval", "report",
                      "bounds"},
                     "");
  ctx.format = eval::format_from_name(opt.format);
  if (opt.seeds == 0) throw ConfigError("--seeds", "must be positive");
  const std::uint64_t seed = opt.seed ? *opt.seed : ctx.cfg.contains("seed") ? read_seed(ctx.cfg.at("seed")) : 1;
  for (std::size_t i = 0; i < opt.seeds; ++i) ctx.seeds.push_back(seed + i);
  ctx.out = opt.out.empty() ? default_out(command, opt.config) : fs::path(opt.out);
  fs::create_directories(ctx.out);

  ctx.manifest.command = command;
  ctx.manifest.config_path = opt.config;
  ctx.manifest.flags = {{"seed", seed},
                        {"seeds", opt.seeds},
                        {"format", opt.format},
                        {"jobs", opt.jobs},
                        {"out", ctx.out.string()}};

  if (command == "pretrain") cmd_pretrain(ctx);
  else if (command == "distill") cmd_distill(ctx);
  else if (command == "cascade") cmd_cascade(ctx);
  else if (command == "ablate") cmd_ablate(ctx);
  else if (command == "eval") cmd_eval(ctx);
  else if (command == "report") cmd_report(ctx);
  else cmd_bounds(ctx);

  ctx.manifest.finished_at = cli::utc_now();
  ctx.manifest.write(ctx.out);
  std::cerr << command << ": wrote " << ctx.out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded knowledge distillation laboratory for tiny vision-language models"};
  app.require_subcommand(1);
  Options opt;
  const std::pair<const char*, const char*> commands[] = {
      {"pretrain", "Train tiers directly (encoder pretraining, PT, FT)"},
      {"distill", "Single-teacher distillation into a student"},
      {"cascade", "Run a bottom-up, top-down or single-teacher plan"},
      {"ablate", "Seed-replicated comparison of all strategies"},
      {"bounds", "Sweep the generalisation bound comparison"},
      {"eval", "Score checkpoints on the evaluation splits"},
      {"report", "Combine result tables into one report"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "Output directory (default $CKD_OUT_ROOT/<command>/<config name>)");
    sub->add_option("--seed", opt.seed, "First seed (overrides the config's seed)");
    sub->add_option("--seeds", opt.seeds, "Number of consecutive seeds to run")->check(CLI::PositiveNumber);
    sub->add_option("--format", opt.format, "Report format: md, csv or json")
        ->check(CLI::IsMember({"md", "markdown", "csv", "json"}));
    sub->add_option("--jobs", opt.jobs, "Seeds run concurrently")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  try {
    return run(app.get_subcommands().front()->get_name(), opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
