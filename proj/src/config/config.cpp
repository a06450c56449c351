#include "ckd/config/config.hpp"

#include <cmath>
#include <fstream>

#include "ckd/util/error.hpp"

namespace ckd::config {

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void expect_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "must be an object");
}

bool read(const Json& j, const char* key, const std::string& path, double& out) {
  if (!j.contains(key)) return false;
  const Json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(join(path, key), "must be a number");
  out = v.get<double>();
  if (!std::isfinite(out)) throw ConfigError(join(path, key), "must be finite");
  return true;
}

template <typename U>
bool read_uint(const Json& j, const char* key, const std::string& path, U& out) {
  if (!j.contains(key)) return false;
  const Json& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    throw ConfigError(join(path, key), "must be a nonnegative integer");
  }
  out = static_cast<U>(v.get<unsigned long long>());
  return true;
}

bool read(const Json& j, const char* key, const std::string& path, std::string& out) {
  if (!j.contains(key)) return false;
  if (!j.at(key).is_string()) throw ConfigError(join(path, key), "must be a string");
  out = j.at(key).get<std::string>();
  return true;
}

bool read(const Json& j, const char* key, const std::string& path, bool& out) {
  if (!j.contains(key)) return false;
  if (!j.at(key).is_boolean()) throw ConfigError(join(path, key), "must be true or false");
  out = j.at(key).get<bool>();
  return true;
}

pipeline::StepConfig parse_step(const Json& j, pipeline::StepKind kind, const std::string& path) {
  expect_object(j, path);
  check_keys(j, {"lr", "batch_size", "epochs", "warmup_ratio", "weight_decay", "clip_norm", "tau1",
                 "tau2", "tau3", "temperature", "normalization"},
             path);
  pipeline::StepConfig s = pipeline::step_defaults(kind);
  read(j, "lr", path, s.peak_lr);
  read_uint(j, "batch_size", path, s.batch_size);
  read_uint(j, "epochs", path, s.epochs);
  read(j, "warmup_ratio", path, s.warmup_ratio);
  read(j, "weight_decay", path, s.weight_decay);
  read(j, "clip_norm", path, s.clip_norm);
  read(j, "tau1", path, s.weights.tau1);
  read(j, "tau2", path, s.weights.tau2);
  read(j, "tau3", path, s.weights.tau3);
  read(j, "temperature", path, s.weights.temperature);
  std::string norm;
  if (read(j, "normalization", path, norm)) {
    if (norm == "mean") s.weights.normalization = losses::Normalization::mean;
    else if (norm == "raw_sum") s.weights.normalization = losses::Normalization::raw_sum;
    else throw ConfigError(join(path, "normalization"), "must be \"mean\" or \"raw_sum\"");
  }
  s.validate(path);
  return s;
}

Json step_snapshot(const pipeline::StepConfig& s) {
  return {{"lr", s.peak_lr},
          {"batch_size", s.batch_size},
          {"epochs", s.epochs},
          {"warmup_ratio", s.warmup_ratio},
          {"weight_decay", s.weight_decay},
          {"clip_norm", s.clip_norm},
          {"tau1", s.weights.tau1},
          {"tau2", s.weights.tau2},
          {"tau3", s.weights.tau3},
          {"temperature", s.weights.temperature},
          {"normalization", s.weights.normalization == losses::Normalization::mean ? "mean" : "raw_sum"}};
}

std::vector<double> parse_axis(const Json& j, const std::string& path) {
  if (j.is_array()) {
    std::vector<double> v;
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]", "must be a number");
      v.push_back(j[i].get<double>());
    }
    if (v.empty()) throw ConfigError(path, "must not be empty");
    return v;
  }
  expect_object(j, path);
  check_keys(j, {"from", "to", "log10_from", "log10_to", "count"}, path);
  std::size_t count = 0;
  if (!read_uint(j, "count", path, count) || count == 0) throw ConfigError(join(path, "count"), "must be positive");
  double lo = 0, hi = 0;
  const bool log = j.contains("log10_from");
  if (log) {
    require(j, "log10_to", path);
    read(j, "log10_from", path, lo);
    read(j, "log10_to", path, hi);
  } else {
    require(j, "from", path);
    require(j, "to", path);
    read(j, "from", path, lo);
    read(j, "to", path, hi);
  }
  std::vector<double> v;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    v.push_back(log ? std::pow(10.0, t) : t);
  }
  return v;
}

// Re-roots a validator error ("bounds.n: ...") under the section path being parsed.
void validate_under(const bounds::BoundParams& p, const std::string& path) {
  try {
    p.validate();
  } catch (const ConfigError& e) {
    const std::string& k = e.key_path();
    const std::string field = k.rfind("bounds.", 0) == 0 ? k.substr(7) : k;
    const std::string msg = std::string(e.what()).substr(k.size() + 2);
    throw ConfigError(join(path, field), msg);
  }
}

}  // namespace

const Json& require(const Json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(join(path, key), "missing required key");
  return j.at(key);
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(join(path, key), "unknown key");
  }
}

Json load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError(path.string(), "cannot open config file");
  try {
    Json j = Json::parse(is);
    if (!j.is_object()) throw ConfigError(path.string(), "top level must be an object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
}

data::CorpusConfig parse_corpus(const Json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, {"grid", "min_objects", "max_objects", "noise", "n_caption_pairs", "n_instruction_pairs",
                 "n_eval_per_split", "instruction_caption_share", "question_mix", "eval_bucket_fraction",
                 "seed"},
             path);
  data::CorpusConfig c;
  read_uint(j, "grid", path, c.scene.grid);
  read_uint(j, "min_objects", path, c.scene.min_objects);
  read_uint(j, "max_objects", path, c.scene.max_objects);
  read(j, "noise", path, c.scene.noise);
  read_uint(j, "n_caption_pairs", path, c.n_caption_pairs);
  read_uint(j, "n_instruction_pairs", path, c.n_instruction_pairs);
  read_uint(j, "n_eval_per_split", path, c.n_eval_per_split);
  read(j, "instruction_caption_share", path, c.instruction_caption_share);
  read(j, "eval_bucket_fraction", path, c.eval_bucket_fraction);
  read_uint(j, "seed", path, c.seed);
  if (j.contains("question_mix")) {
    const auto v = parse_axis(j.at("question_mix"), join(path, "question_mix"));
    if (v.size() != 3) throw ConfigError(join(path, "question_mix"), "needs 3 weights (lookup, counting, relational)");
    for (int i = 0; i < 3; ++i) c.question_mix[i] = v[i];
  }
  if (c.scene.grid < 2 || c.scene.grid > 9) throw ConfigError(join(path, "grid"), "must lie in [2, 9]");
  if (c.scene.min_objects < 1 || c.scene.min_objects > c.scene.max_objects) {
    throw ConfigError(join(path, "min_objects"), "must lie in [1, max_objects]");
  }
  if (c.scene.max_objects > 9 || c.scene.max_objects > c.scene.grid * c.scene.grid) {
    throw ConfigError(join(path, "max_objects"), "must be at most 9 and at most grid*grid");
  }
  if (c.scene.noise < 0) throw ConfigError(join(path, "noise"), "must be nonnegative");
  if (c.n_eval_per_split == 0) throw ConfigError(join(path, "n_eval_per_split"), "must be positive");
  if (c.n_caption_pairs == 0) throw ConfigError(join(path, "n_caption_pairs"), "must be positive");
  if (c.n_instruction_pairs == 0) throw ConfigError(join(path, "n_instruction_pairs"), "must be positive");
  if (!(c.instruction_caption_share >= 0 && c.instruction_caption_share <= 1)) {
    throw ConfigError(join(path, "instruction_caption_share"), "must lie in [0, 1]");
  }
  if (!(c.eval_bucket_fraction > 0 && c.eval_bucket_fraction < 1)) {
    throw ConfigError(join(path, "eval_bucket_fraction"), "must lie in (0, 1)");
  }
  double mix = 0;
  for (double w : c.question_mix) {
    if (w < 0) throw ConfigError(join(path, "question_mix"), "weights must be nonnegative");
    mix += w;
  }
  if (!(mix > 0)) throw ConfigError(join(path, "question_mix"), "weights must not all be zero");
  return c;
}

pipeline::PipelineConfig parse_pipeline(const Json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, {"encoder", "pt", "ft", "dpt", "sft", "dft"}, path);
  pipeline::PipelineConfig p;
  if (j.contains("encoder")) {
    const Json& e = j.at("encoder");
    const std::string ep = join(path, "encoder");
    expect_object(e, ep);
    check_keys(e, {"lr", "batch_size", "epochs"}, ep);
    read(e, "lr", ep, p.encoder.lr);
    read_uint(e, "batch_size", ep, p.encoder.batch_size);
    read_uint(e, "epochs", ep, p.encoder.epochs);
  }
  const std::pair<const char*, pipeline::StepKind> steps[] = {
      {"pt", pipeline::StepKind::PT}, {"ft", pipeline::StepKind::FT}, {"dpt", pipeline::StepKind::DPT},
      {"sft", pipeline::StepKind::SFT}, {"dft", pipeline::StepKind::DFT}};
  for (const auto& [key, kind] : steps) {
    if (j.contains(key)) p.step(kind) = parse_step(j.at(key), kind, join(path, key));
  }
  p.validate();
  return p;
}

bounds::BoundParams parse_bound_params(const Json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, {"c_s", "c_a", "c_t", "c_sbar", "n", "a_s", "a_a", "a_t", "a_sa", "a_st", "a_sbar",
                 "a_sbart", "eps_s", "eps_a", "eps_t", "eps_sa", "eps_st", "eps_sbar", "eps_sbart", "k",
                 "enforce_assumptions"},
             path);
  bounds::BoundParams p;
  read(j, "c_s", path, p.c_s);
  read(j, "c_a", path, p.c_a);
  read(j, "c_t", path, p.c_t);
  double c_sbar = 0;
  if (read(j, "c_sbar", path, c_sbar)) p.c_sbar = c_sbar;
  read(j, "n", path, p.n);
  read(j, "a_s", path, p.a_s);
  read(j, "a_a", path, p.a_a);
  read(j, "a_t", path, p.a_t);
  read(j, "a_sa", path, p.a_sa);
  read(j, "a_st", path, p.a_st);
  read(j, "a_sbar", path, p.a_sbar);
  read(j, "a_sbart", path, p.a_sbart);
  read(j, "eps_s", path, p.eps_s);
  read(j, "eps_a", path, p.eps_a);
  read(j, "eps_t", path, p.eps_t);
  read(j, "eps_sa", path, p.eps_sa);
  read(j, "eps_st", path, p.eps_st);
  read(j, "eps_sbar", path, p.eps_sbar);
  read(j, "eps_sbart", path, p.eps_sbart);
  read(j, "k", path, p.k);
  read(j, "enforce_assumptions", path, p.enforce_assumptions);
  validate_under(p, path);
  return p;
}

bounds::SweepSpec parse_sweep(const Json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, {"params", "n", "a_st", "a_sbart", "c_sbar", "c_t", "eps_st", "eps_sbart", "k"}, path);
  bounds::SweepSpec s;
  if (j.contains("params")) s.base = parse_bound_params(j.at("params"), join(path, "params"));
  const std::pair<const char*, std::vector<double> bounds::SweepSpec::*> axes[] = {
      {"n", &bounds::SweepSpec::n},           {"a_st", &bounds::SweepSpec::a_st},
      {"a_sbart", &bounds::SweepSpec::a_sbart}, {"c_sbar", &bounds::SweepSpec::c_sbar},
      {"c_t", &bounds::SweepSpec::c_t},       {"eps_st", &bounds::SweepSpec::eps_st},
      {"eps_sbart", &bounds::SweepSpec::eps_sbart}, {"k", &bounds::SweepSpec::k}};
  for (const auto& [key, member] : axes) {
    if (j.contains(key)) s.*member = parse_axis(j.at(key), join(path, key));
  }
  // Every grid point must be in the domain; ordering violations are skipped by the sweep.
  for (const auto& [key, member] : axes) {
    for (double v : s.*member) {
      bounds::BoundParams probe = s.base;
      probe.enforce_assumptions = false;
      if (std::string(key) == "n") probe.n = v;
      else if (std::string(key) == "a_st") probe.a_st = v;
      else if (std::string(key) == "a_sbart") probe.a_sbart = v;
      else if (std::string(key) == "c_sbar") probe.c_sbar = v;
      else if (std::string(key) == "c_t") probe.c_t = v;
      else if (std::string(key) == "eps_st") probe.eps_st = v;
      else if (std::string(key) == "eps_sbart") probe.eps_sbart = v;
      else probe.k = v;
      validate_under(probe, path);
    }
  }
  return s;
}

std::vector<model::Tier> parse_tiers(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "must be a nonempty array of tier names");
  std::vector<model::Tier> tiers;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    if (!j[i].is_string()) throw ConfigError(p, "must be a tier name");
    try {
      tiers.push_back(model::tier_from_name(j[i].get<std::string>()));
    } catch (const ConfigError& e) {
      throw ConfigError(p, e.what());
    }
  }
  return tiers;
}

Json snapshot(const data::CorpusConfig& c) {
  return {{"grid", c.scene.grid},
          {"min_objects", c.scene.min_objects},
          {"max_objects", c.scene.max_objects},
          {"noise", c.scene.noise},
          {"n_caption_pairs", c.n_caption_pairs},
          {"n_instruction_pairs", c.n_instruction_pairs},
          {"n_eval_per_split", c.n_eval_per_split},
          {"instruction_caption_share", c.instruction_caption_share},
          {"question_mix", c.question_mix},
          {"eval_bucket_fraction", c.eval_bucket_fraction},
          {"seed", c.seed}};
}

Json snapshot(const pipeline::PipelineConfig& p) {
  return {{"encoder", {{"lr", p.encoder.lr}, {"batch_size", p.encoder.batch_size}, {"epochs", p.encoder.epochs}}},
          {"pt", step_snapshot(p.pt)},
          {"ft", step_snapshot(p.ft)},
          {"dpt", step_snapshot(p.dpt)},
          {"sft", step_snapshot(p.sft)},
          {"dft", step_snapshot(p.dft)}};
}

Json snapshot(const bounds::BoundParams& p) {
  Json j{{"c_s", p.c_s}, {"c_a", p.c_a}, {"c_t", p.c_t}, {"c_sbar", p.capacity_sbar()}, {"n", p.n},
         {"a_s", p.a_s}, {"a_a", p.a_a}, {"a_t", p.a_t}, {"a_sa", p.a_sa}, {"a_st", p.a_st},
         {"a_sbar", p.a_sbar}, {"a_sbart", p.a_sbart}, {"eps_s", p.eps_s}, {"eps_a", p.eps_a},
         {"eps_t", p.eps_t}, {"eps_sa", p.eps_sa}, {"eps_st", p.eps_st}, {"eps_sbar", p.eps_sbar},
         {"eps_sbart", p.eps_sbart}, {"k", p.k}, {"enforce_assumptions", p.enforce_assumptions}};
  return j;
}

}  // namespace ckd::config
