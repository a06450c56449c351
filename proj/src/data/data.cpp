#include "ckd/data/data.hpp"

#include <algorithm>
#include <istream>
#include <json.hpp>
#include <ostream>
#include <string>

#include "ckd/util/error.hpp"

namespace ckd::data {

namespace {

using json = nlohmann::json;

// 3x3 pixel masks, row-major.
constexpr std::uint8_t kMasks[kNumShapes][9] = {
    {0, 1, 0, 1, 0, 1, 0, 1, 0},  // circle
    {1, 1, 1, 1, 0, 1, 1, 1, 1},  // square
    {0, 1, 0, 1, 1, 1, 1, 1, 1},  // triangle
    {1, 0, 1, 0, 1, 0, 1, 0, 1},  // cross
};
constexpr double kRgb[kNumColors][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}};

constexpr const char* kTaskNames[kNumTasks] = {"caption",     "color_of", "shape_at",
                                               "count_color", "right_of", "below"};
constexpr const char* kSplitNames[kNumSplits] = {"lookup", "counting", "relational",
                                                 "captioning"};

Example question(const SceneSpec& scene, Task task, std::int32_t q, std::int32_t arg,
                 std::int32_t answer, const Vocab& vocab) {
  return Example{scene, task, {q, arg, answer, vocab.eos}, {0, 0, 1, 0}};
}

}  // namespace

void SceneSpec::validate() const {
  std::vector<std::uint8_t> used(grid * grid, 0);
  for (const Object& o : objects) {
    if (o.shape < 0 || o.shape >= kNumShapes || o.color < 0 || o.color >= kNumColors) {
      throw Error("scene object has out-of-range shape/color id");
    }
    if (o.cell < 0 || static_cast<std::uint32_t>(o.cell) >= grid * grid) {
      throw Error("scene object cell " + std::to_string(o.cell) + " outside grid");
    }
    if (used[o.cell]++) throw Error("two scene objects share cell " + std::to_string(o.cell));
  }
}

const Object* SceneSpec::at(int cell) const {
  for (const Object& o : objects) {
    if (o.cell == cell) return &o;
  }
  return nullptr;
}

std::uint64_t SceneSpec::signature() const {
  std::uint64_t h = splitmix64(grid);
  for (const Object& o : objects) {
    h = splitmix64(h ^ static_cast<std::uint64_t>((o.cell << 8) | (o.shape << 4) | o.color));
  }
  return h;
}

Scene gen_scene(std::uint64_t seed, const SceneParams& params) {
  if (params.min_objects > params.max_objects ||
      params.max_objects > params.grid * params.grid) {
    throw ConfigError("scene", "need min_objects <= max_objects <= grid^2");
  }
  Rng rng(seed);
  const std::uint32_t cells = params.grid * params.grid;
  const std::size_t n =
      params.min_objects + rng.below(params.max_objects - params.min_objects + 1);
  std::vector<int> order(cells);
  for (std::uint32_t k = 0; k < cells; ++k) order[k] = static_cast<int>(k);
  rng.shuffle(std::span<int>(order));
  Scene scene;
  scene.spec.grid = params.grid;
  scene.spec.seed = derive_seed(seed, "pixels");
  for (std::size_t i = 0; i < n; ++i) {
    scene.spec.objects.push_back(Object{static_cast<int>(rng.below(kNumShapes)),
                                        static_cast<int>(rng.below(kNumColors)), order[i]});
  }
  std::sort(scene.spec.objects.begin(), scene.spec.objects.end(),
            [](const Object& a, const Object& b) { return a.cell < b.cell; });
  scene.patches = render_patches(scene.spec, params.noise);
  return scene;
}

std::vector<double> render_patches(const SceneSpec& spec, double noise) {
  const std::size_t cells = spec.grid * spec.grid;
  std::vector<double> out(cells * kPatchDim);
  Rng rng(spec.seed);
  for (std::size_t k = 0; k < cells; ++k) {
    const Object* o = spec.at(static_cast<int>(k));
    for (std::size_t p = 0; p < 9; ++p) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double base = o && kMasks[o->shape][p] ? kRgb[o->color][ch] : 0.0;
        out[k * kPatchDim + p * 3 + ch] = base + noise * rng.uniform(-1.0, 1.0);
      }
    }
  }
  return out;
}

Split split_of(Task t) {
  switch (t) {
    case Task::caption: return Split::captioning;
    case Task::color_of:
    case Task::shape_at: return Split::lookup;
    case Task::count_color: return Split::counting;
    case Task::right_of:
    case Task::below: return Split::relational;
  }
  return Split::lookup;
}

const char* task_name(Task t) { return kTaskNames[static_cast<int>(t)]; }
const char* split_name(Split s) { return kSplitNames[static_cast<int>(s)]; }

Task task_from_name(const std::string& name) {
  for (int t = 0; t < kNumTasks; ++t) {
    if (name == kTaskNames[t]) return static_cast<Task>(t);
  }
  throw Error("unknown task '" + name + "'");
}

std::size_t Example::length() const noexcept {
  return static_cast<std::size_t>(scene.grid) * scene.grid + text.size();
}

Example gen_caption_pair(const SceneSpec& scene, const Vocab& vocab) {
  Example ex{scene, Task::caption, {vocab.caption}, {0}};
  for (const Object& o : scene.objects) {  // objects are kept in raster order
    ex.text.push_back(vocab.color(o.color));
    ex.text.push_back(vocab.shape(o.shape));
    ex.supervised.insert(ex.supervised.end(), {1, 1});
  }
  ex.text.push_back(vocab.eos);
  ex.supervised.push_back(1);
  return ex;
}

std::optional<Example> gen_instruction_pair(const SceneSpec& scene, Task task, const Vocab& vocab,
                                            Rng& rng) {
  const int g = static_cast<int>(scene.grid);
  int shape_count[kNumShapes] = {};
  int color_count[kNumColors] = {};
  for (const Object& o : scene.objects) {
    ++shape_count[o.shape];
    ++color_count[o.color];
  }
  auto shape_or_none = [&](int cell) {
    const Object* o = scene.at(cell);
    return o ? vocab.shape(o->shape) : static_cast<std::int32_t>(vocab.none);
  };

  switch (task) {
    case Task::caption: return gen_caption_pair(scene, vocab);
    case Task::color_of: {
      std::vector<const Object*> unique;
      for (const Object& o : scene.objects) {
        if (shape_count[o.shape] == 1) unique.push_back(&o);
      }
      if (unique.empty()) return std::nullopt;
      const Object* o = unique[rng.below(unique.size())];
      return question(scene, task, vocab.q_color_of, vocab.shape(o->shape), vocab.color(o->color),
                      vocab);
    }
    case Task::shape_at: {
      const int cell = static_cast<int>(rng.below(scene.grid * scene.grid));
      return question(scene, task, vocab.q_shape_at, vocab.cell(cell), shape_or_none(cell), vocab);
    }
    case Task::count_color: {
      const int c = static_cast<int>(rng.below(kNumColors));
      return question(scene, task, vocab.q_count_color, vocab.color(c),
                      vocab.number(color_count[c]), vocab);
    }
    case Task::right_of:
    case Task::below: {
      const bool right = task == Task::right_of;
      std::vector<const Object*> anchors;
      for (const Object& o : scene.objects) {
        const bool inside = right ? o.cell % g < g - 1 : o.cell / g < g - 1;
        if (color_count[o.color] == 1 && inside && scene.at(o.cell + (right ? 1 : g))) {
          anchors.push_back(&o);
        }
      }
      if (anchors.empty()) return std::nullopt;
      const Object* o = anchors[rng.below(anchors.size())];
      return question(scene, task, right ? vocab.q_right_of : vocab.q_below,
                      vocab.color(o->color), shape_or_none(o->cell + (right ? 1 : g)), vocab);
    }
  }
  return std::nullopt;
}

std::int32_t oracle_answer(const SceneSpec& scene, std::int32_t q, std::int32_t arg,
                           const Vocab& vocab) {
  const int g = static_cast<int>(scene.grid);
  // Work in (row, col) coordinates from scratch.
  auto shape_token_at = [&](int row, int col) -> std::int32_t {
    for (const Object& o : scene.objects) {
      if (o.cell / g == row && o.cell % g == col) return vocab.shape(o.shape);
    }
    return vocab.none;
  };
  if (q == vocab.q_color_of) {
    const Object* found = nullptr;
    int matches = 0;
    for (const Object& o : scene.objects) {
      if (vocab.shape(o.shape) == arg) {
        found = &o;
        ++matches;
      }
    }
    if (matches != 1) throw Error("color_of: shape is not unique in the scene");
    return vocab.color(found->color);
  }
  if (q == vocab.q_shape_at) {
    for (int k = 0; k < g * g; ++k) {
      if (vocab.cell(k) == arg) return shape_token_at(k / g, k % g);
    }
    throw Error("shape_at: argument is not a cell");
  }
  if (q == vocab.q_count_color) {
    int n = 0;
    for (const Object& o : scene.objects) n += vocab.color(o.color) == arg;
    return vocab.number(n);
  }
  if (q == vocab.q_right_of || q == vocab.q_below) {
    int row = -1, col = -1, matches = 0;
    for (const Object& o : scene.objects) {
      if (vocab.color(o.color) == arg) {
        row = o.cell / g;
        col = o.cell % g;
        ++matches;
      }
    }
    if (matches != 1) throw Error("relational: anchor color is not unique");
    if (q == vocab.q_right_of) ++col;
    else ++row;
    if (row >= g || col >= g) throw Error("relational: neighbour outside grid");
    return shape_token_at(row, col);
  }
  throw Error("unknown question token " + std::to_string(q));
}

TokenBatch make_batch(std::span<const Example* const> examples, double noise) {
  if (examples.empty()) throw Error("make_batch: no examples");
  TokenBatch b;
  b.n_seq = examples.size();
  b.n_visual = examples[0]->scene.grid * examples[0]->scene.grid;
  for (const Example* ex : examples) {
    if (ex->scene.grid * ex->scene.grid != b.n_visual) {
      throw ShapeError("make_batch: examples with different grid sizes");
    }
    b.seq_len = std::max(b.seq_len, ex->length());
  }
  const std::size_t T = b.seq_len, m = b.n_visual;
  b.tokens.assign(b.n_seq * T, Vocab::pad);
  b.relevance.assign(b.n_seq * T, 0);
  b.patches.resize(b.n_seq * m * kPatchDim);
  for (std::size_t s = 0; s < b.n_seq; ++s) {
    const Example& ex = *examples[s];
    const std::vector<double> px = render_patches(ex.scene, noise);
    std::copy(px.begin(), px.end(), b.patches.begin() + s * m * kPatchDim);
    for (std::size_t i = 0; i < m; ++i) {
      b.tokens[s * T + i] = Vocab::img;
      b.relevance[s * T + i] = 1;
    }
    for (std::size_t j = 0; j < ex.text.size(); ++j) {
      b.tokens[s * T + m + j] = ex.text[j];
      if (ex.supervised[j]) b.relevance[s * T + m + j - 1] = 1;
    }
  }
  return b;
}

TokenBatch make_batch(std::span<const Example> examples, double noise) {
  std::vector<const Example*> ptrs;
  ptrs.reserve(examples.size());
  for (const Example& e : examples) ptrs.push_back(&e);
  return make_batch(std::span<const Example* const>(ptrs), noise);
}

Vocab make_vocab(const SceneParams& params) { return Vocab(params.grid, params.max_objects); }

bool is_eval_scene(const SceneSpec& spec, double eval_bucket_fraction) {
  return static_cast<double>(spec.signature() % 1000) < eval_bucket_fraction * 1000.0;
}

Corpus build_corpus(const CorpusConfig& cfg) {
  if (!(cfg.eval_bucket_fraction > 0.0 && cfg.eval_bucket_fraction < 1.0)) {
    throw ConfigError("corpus.eval_bucket_fraction", "must lie in (0, 1)");
  }
  if (cfg.instruction_caption_share < 0.0 || cfg.instruction_caption_share > 1.0) {
    throw ConfigError("corpus.instruction_caption_share", "must lie in [0, 1]");
  }
  const double mix_total = cfg.question_mix[0] + cfg.question_mix[1] + cfg.question_mix[2];
  if (!(mix_total > 0.0) || *std::min_element(cfg.question_mix.begin(), cfg.question_mix.end()) < 0) {
    throw ConfigError("corpus.question_mix", "weights must be nonnegative with a positive sum");
  }
  const Vocab vocab = make_vocab(cfg.scene);

  struct Stream {
    std::uint64_t base;
    std::uint64_t next = 0;
  };
  auto draw = [&](Stream& st, bool want_eval) {
    for (;;) {
      Scene sc = gen_scene(splitmix64(st.base + st.next++), cfg.scene);
      if (is_eval_scene(sc.spec, cfg.eval_bucket_fraction) == want_eval) return sc.spec;
    }
  };
  auto pick_task = [&](Rng& rng, Split split) {
    switch (split) {
      case Split::lookup: return rng.below(2) ? Task::shape_at : Task::color_of;
      case Split::counting: return Task::count_color;
      case Split::relational: return rng.below(2) ? Task::below : Task::right_of;
      case Split::captioning: return Task::caption;
    }
    return Task::caption;
  };
  auto emit = [&](Stream& st, bool want_eval, Split split, Rng& rng) {
    for (;;) {
      const SceneSpec spec = draw(st, want_eval);
      if (auto ex = gen_instruction_pair(spec, pick_task(rng, split), vocab, rng)) return *ex;
    }
  };

  Corpus c;
  Stream train{derive_seed(cfg.seed, "train-scenes")};
  Stream eval{derive_seed(cfg.seed, "eval-scenes")};
  Rng rng(derive_seed(cfg.seed, "tasks"));

  c.captions.reserve(cfg.n_caption_pairs);
  for (std::size_t i = 0; i < cfg.n_caption_pairs; ++i) {
    c.captions.push_back(gen_caption_pair(draw(train, false), vocab));
  }
  c.instructions.reserve(cfg.n_instruction_pairs);
  for (std::size_t i = 0; i < cfg.n_instruction_pairs; ++i) {
    Split split = Split::captioning;
    if (rng.uniform() >= cfg.instruction_caption_share) {
      const double u = rng.uniform() * mix_total;
      split = u < cfg.question_mix[0]                         ? Split::lookup
              : u < cfg.question_mix[0] + cfg.question_mix[1] ? Split::counting
                                                              : Split::relational;
    }
    c.instructions.push_back(emit(train, false, split, rng));
  }
  for (Split s : kAllSplits) {
    auto& out = c.eval[static_cast<int>(s)];
    out.reserve(cfg.n_eval_per_split);
    for (std::size_t i = 0; i < cfg.n_eval_per_split; ++i) out.push_back(emit(eval, true, s, rng));
  }
  return c;
}

namespace {

json example_json(const Example& ex, const std::string& split) {
  json objects = json::array();
  for (const Object& o : ex.scene.objects) objects.push_back({o.shape, o.color, o.cell});
  return json{{"split", split},
              {"task", task_name(ex.task)},
              {"scene", {{"grid", ex.scene.grid}, {"seed", ex.scene.seed}, {"objects", objects}}},
              {"tokens", ex.text},
              {"supervised", ex.supervised}};
}

}  // namespace

void write_jsonl(std::ostream& os, const Corpus& corpus, const Vocab&) {
  for (const Example& ex : corpus.captions) os << example_json(ex, "captions").dump() << '\n';
  for (const Example& ex : corpus.instructions) {
    os << example_json(ex, "instructions").dump() << '\n';
  }
  for (Split s : kAllSplits) {
    for (const Example& ex : corpus.eval[static_cast<int>(s)]) {
      os << example_json(ex, std::string("eval_") + split_name(s)).dump() << '\n';
    }
  }
}

Corpus read_jsonl(std::istream& is, const Vocab& vocab) {
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Example ex;
      ex.task = task_from_name(j.at("task").get<std::string>());
      const json& sc = j.at("scene");
      ex.scene.grid = sc.at("grid").get<std::uint32_t>();
      ex.scene.seed = sc.at("seed").get<std::uint64_t>();
      for (const json& o : sc.at("objects")) {
        ex.scene.objects.push_back(Object{o.at(0).get<int>(), o.at(1).get<int>(), o.at(2).get<int>()});
      }
      ex.scene.validate();
      ex.text = j.at("tokens").get<std::vector<std::int32_t>>();
      ex.supervised = j.at("supervised").get<std::vector<std::uint8_t>>();
      if (ex.text.size() != ex.supervised.size()) throw Error("tokens/supervised length mismatch");
      for (std::int32_t t : ex.text) vocab.name(t);
      const std::string split = j.at("split").get<std::string>();
      if (split == "captions") {
        c.captions.push_back(std::move(ex));
      } else if (split == "instructions") {
        c.instructions.push_back(std::move(ex));
      } else {
        bool placed = false;
        for (Split s : kAllSplits) {
          if (split == std::string("eval_") + split_name(s)) {
            c.eval[static_cast<int>(s)].push_back(std::move(ex));
            placed = true;
          }
        }
        if (!placed) throw Error("unknown split '" + split + "'");
      }
    } catch (const json::exception& e) {
      throw Error("corpus line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

}  // namespace ckd::data
