#include <doctest.h>

#include <set>
#include <sstream>
#include <unordered_set>

#include "ckd/data/data.hpp"
#include "ckd/util/error.hpp"

using namespace ckd;
using namespace ckd::data;

namespace {

const Vocab kVocab(3, 5);

SceneSpec one_object(int shape, int color, int cell) { return SceneSpec{3, {{shape, color, cell}}, 7}; }

CorpusConfig small_corpus() {
  CorpusConfig cfg;
  cfg.n_caption_pairs = 300;
  cfg.n_instruction_pairs = 600;
  cfg.n_eval_per_split = 100;
  cfg.seed = 42;
  return cfg;
}

// Renders a caption back from the scene with no generator code involved.
std::vector<std::string> oracle_caption(const SceneSpec& s) {
  std::vector<std::string> words{"<caption>"};
  for (int cell = 0; cell < 9; ++cell) {
    for (const Object& o : s.objects) {
      if (o.cell == cell) {
        words.push_back(color_name(o.color));
        words.push_back(shape_name(o.shape));
      }
    }
  }
  words.push_back("<eos>");
  return words;
}

}  // namespace

TEST_CASE("vocabulary layout") {
  CHECK(kVocab.size() == 10 + 4 + 4 + 6 + 9);
  CHECK(kVocab.name(kVocab.color(0)) == "red");
  CHECK(kVocab.name(kVocab.shape(3)) == "cross");
  CHECK(kVocab.name(kVocab.number(0)) == "zero");
  CHECK(kVocab.name(kVocab.cell(5)) == "cell12");
  CHECK(kVocab.id("yellow") == kVocab.color(3));
  CHECK_THROWS(kVocab.id("purple"));
  CHECK_THROWS(kVocab.number(6));
}

TEST_CASE("gen_scene") {
  SUBCASE("same seed twice gives the same scene") {
    const Scene a = gen_scene(123), b = gen_scene(123);
    CHECK(a.spec == b.spec);
    CHECK(a.patches == b.patches);
  }
  SUBCASE("g=4 with 3 objects uses 3 distinct cells") {
    const Scene s = gen_scene(9, SceneParams{4, 3, 3, 0.1});
    CHECK(s.spec.objects.size() == 3);
    std::set<int> cells;
    for (const Object& o : s.spec.objects) cells.insert(o.cell);
    CHECK(cells.size() == 3);
    CHECK(s.patches.size() == 16 * kPatchDim);
  }
  SUBCASE("1000 scenes have at least 99% unique signatures") {
    std::unordered_set<std::uint64_t> sigs;
    for (std::uint64_t i = 0; i < 1000; ++i) sigs.insert(gen_scene(splitmix64(i)).spec.signature());
    CHECK(sigs.size() >= 990);
  }
  SUBCASE("specs validate") {
    for (std::uint64_t i = 0; i < 500; ++i) CHECK_NOTHROW(gen_scene(i).spec.validate());
    SceneSpec bad{3, {{0, 0, 4}, {1, 1, 4}}, 0};
    CHECK_THROWS(bad.validate());
  }
  SUBCASE("noise-free pixels show the shape mask in the object color") {
    SceneSpec s = one_object(1, 2, 0);  // blue square in the corner
    const auto px = render_patches(s, 0.0);
    CHECK(px[2] == 1.0);   // pixel 0, blue channel
    CHECK(px[0] == 0.0);   // red channel
    CHECK(px[4 * 3 + 2] == 0.0);  // square outline has an empty centre
    for (std::size_t i = kPatchDim; i < px.size(); ++i) CHECK(px[i] == 0.0);
  }
}

TEST_CASE("caption pairs") {
  SUBCASE("single red circle") {
    const Example ex = gen_caption_pair(one_object(0, 0, 4), kVocab);
    CHECK(ex.text == std::vector<std::int32_t>{kVocab.caption, kVocab.color(0), kVocab.shape(0),
                                               kVocab.eos});
    CHECK(ex.supervised == std::vector<std::uint8_t>{0, 1, 1, 1});
  }
  SUBCASE("empty scene") {
    const Example ex = gen_caption_pair(SceneSpec{3, {}, 0}, kVocab);
    CHECK(ex.text == std::vector<std::int32_t>{kVocab.caption, kVocab.eos});
  }
  SUBCASE("caption round-trips through the oracle renderer") {
    for (std::uint64_t i = 0; i < 500; ++i) {
      const SceneSpec s = gen_scene(i).spec;
      const Example ex = gen_caption_pair(s, kVocab);
      std::vector<std::string> words;
      for (std::int32_t t : ex.text) words.push_back(kVocab.name(t));
      CHECK(words == oracle_caption(s));
    }
  }
}

TEST_CASE("instruction pairs") {
  Rng rng(5);
  SUBCASE("color of the red circle") {
    const auto ex = gen_instruction_pair(one_object(0, 0, 0), Task::color_of, kVocab, rng);
    REQUIRE(ex);
    CHECK(ex->text == std::vector<std::int32_t>{kVocab.q_color_of, kVocab.shape(0),
                                                kVocab.color(0), kVocab.eos});
    CHECK(ex->supervised == std::vector<std::uint8_t>{0, 0, 1, 0});
  }
  SUBCASE("count with no matches answers zero") {
    const SceneSpec s = one_object(0, 0, 0);
    for (int trial = 0; trial < 40; ++trial) {
      const auto ex = gen_instruction_pair(s, Task::count_color, kVocab, rng);
      REQUIRE(ex);
      if (ex->text[1] != kVocab.color(0)) CHECK(ex->text[2] == kVocab.number(0));
    }
  }
  SUBCASE("relational questions need a unique anchor with an occupied neighbour") {
    // Both objects red: no unique anchor.
    const SceneSpec twins{3, {{0, 0, 0}, {1, 0, 1}}, 0};
    CHECK_FALSE(gen_instruction_pair(twins, Task::right_of, kVocab, rng));
    // Anchor in the last column has no right neighbour; empty cell below.
    CHECK_FALSE(gen_instruction_pair(one_object(0, 1, 2), Task::right_of, kVocab, rng));
    CHECK_FALSE(gen_instruction_pair(one_object(0, 1, 2), Task::below, kVocab, rng));
    // Anchor at cell 2 with an object below it at cell 5.
    const SceneSpec pair{3, {{1, 1, 2}, {2, 0, 5}}, 0};
    const auto ex = gen_instruction_pair(pair, Task::below, kVocab, rng);
    REQUIRE(ex);
    CHECK(ex->text[1] == kVocab.color(1));
    CHECK(ex->text[2] == kVocab.shape(2));
  }
  SUBCASE("10k generated questions agree with the symbolic oracle") {
    const Task tasks[] = {Task::color_of, Task::shape_at, Task::count_color, Task::right_of,
                          Task::below};
    int generated = 0, agreed = 0;
    for (std::uint64_t i = 0; generated < 10000; ++i) {
      const SceneSpec s = gen_scene(splitmix64(i + 77)).spec;
      const auto ex = gen_instruction_pair(s, tasks[i % 5], kVocab, rng);
      if (!ex) continue;
      ++generated;
      agreed += oracle_answer(s, ex->text[0], ex->text[1], kVocab) == ex->text[2];
    }
    CHECK(agreed == generated);
  }
}

TEST_CASE("make_batch") {
  const Example cap = gen_caption_pair(one_object(0, 0, 4), kVocab);
  Rng rng(1);
  const Example q = *gen_instruction_pair(one_object(2, 1, 3), Task::shape_at, kVocab, rng);
  const std::vector<Example> exs{cap, q};
  const TokenBatch b = make_batch(exs, 0.1);
  CHECK(b.n_seq == 2);
  CHECK(b.n_visual == 9);
  CHECK(b.seq_len == 13);
  CHECK(b.patches.size() == 2 * 9 * kPatchDim);
  // Caption: visual, then <caption> predicts red ... <eos>; the <eos> slot predicts nothing.
  const std::vector<std::uint8_t> rel0{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0};
  CHECK(std::vector<std::uint8_t>(b.relevance.begin(), b.relevance.begin() + 13) == rel0);
  // Question: only the argument slot (which predicts the answer) is text-relevant.
  const std::vector<std::uint8_t> rel1{1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 1, 0, 0};
  CHECK(std::vector<std::uint8_t>(b.relevance.begin() + 13, b.relevance.end()) == rel1);
  CHECK(b.tokens[0] == Vocab::img);
  CHECK(b.tokens[13 + 9] == kVocab.q_shape_at);

  // An empty-scene caption is two tokens shorter and gets padded.
  const std::vector<Example> ragged{cap, gen_caption_pair(SceneSpec{3, {}, 0}, kVocab)};
  const TokenBatch p = make_batch(ragged, 0.1);
  CHECK(p.tokens[13 + 11] == Vocab::pad);
  CHECK(p.tokens[13 + 12] == Vocab::pad);
  CHECK(p.relevance[13 + 11] == 0);
  CHECK(p.relevance[13 + 9] == 1);
}

TEST_CASE("corpus") {
  const CorpusConfig cfg = small_corpus();
  const Corpus a = build_corpus(cfg);
  SUBCASE("sizes") {
    CHECK(a.captions.size() == 300);
    CHECK(a.instructions.size() == 600);
    for (const auto& split : a.eval) CHECK(split.size() == 100);
  }
  SUBCASE("pure function of the config") {
    const Corpus b = build_corpus(cfg);
    CHECK(a.captions == b.captions);
    CHECK(a.instructions == b.instructions);
    CHECK(a.eval == b.eval);
  }
  SUBCASE("train and eval scene signatures are disjoint") {
    std::unordered_set<std::uint64_t> train;
    for (const Example& e : a.captions) train.insert(e.scene.signature());
    for (const Example& e : a.instructions) train.insert(e.scene.signature());
    for (const auto& split : a.eval) {
      for (const Example& e : split) CHECK(train.count(e.scene.signature()) == 0);
    }
  }
  SUBCASE("eval splits hold their own task families") {
    for (Split s : kAllSplits) {
      for (const Example& e : a.eval[static_cast<int>(s)]) CHECK(split_of(e.task) == s);
    }
  }
  SUBCASE("every question is oracle-answerable") {
    for (const Example& e : a.instructions) {
      if (e.task == Task::caption) continue;
      CHECK(oracle_answer(e.scene, e.text[0], e.text[1], kVocab) == e.text[2]);
    }
  }
  SUBCASE("jsonl round trip") {
    std::stringstream ss;
    write_jsonl(ss, a, kVocab);
    const Corpus back = read_jsonl(ss, kVocab);
    CHECK(back.captions == a.captions);
    CHECK(back.instructions == a.instructions);
    CHECK(back.eval == a.eval);
  }
  SUBCASE("malformed jsonl names the line") {
    std::stringstream ss("{\"split\":\"captions\"}\n");
    CHECK_THROWS_WITH(read_jsonl(ss, kVocab), doctest::Contains("line 1"));
  }
}
