#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ckd/eval/eval.hpp"
#include "ckd/util/error.hpp"
#include "ckd/util/rng.hpp"

using namespace ckd;
using namespace ckd::eval;

namespace {

const data::Corpus& corpus() {
  static const data::Corpus c = [] {
    data::CorpusConfig cc;
    cc.n_caption_pairs = 16;
    cc.n_instruction_pairs = 16;
    cc.n_eval_per_split = 64;
    return data::build_corpus(cc);
  }();
  return c;
}

// Looks the answer up from the batch itself: one-hot on the next token.
Tensor oracle_logits(const data::TokenBatch& b, std::size_t c) {
  Tensor z(Shape{b.n_seq * b.seq_len, c});
  for (std::size_t r = 0; r + 1 < b.tokens.size(); ++r) {
    if ((r + 1) % b.seq_len != 0) z.at(r, static_cast<std::size_t>(b.tokens[r + 1])) = 1.0;
  }
  return z;
}

data::Example question(std::int32_t answer, std::uint64_t seed) {
  data::Example e;
  e.scene = data::gen_scene(seed).spec;
  e.task = data::Task::shape_at;
  e.text = {1, 2, answer, 3};
  e.supervised = {0, 0, 1, 0};
  return e;
}

ResultTable random_table(Rng& rng, std::size_t rows) {
  ResultTable t;
  for (std::size_t i = 0; i < rows; ++i) {
    SplitScores s{};
    for (double& v : s) v = rng.uniform(0, 1);
    t.rows.push_back(make_row("m" + std::to_string(rng.below(3)), "s" + std::to_string(rng.below(3)),
                              rng.below(100), s));
  }
  return t;
}

}  // namespace

TEST_CASE("evaluate") {
  const std::size_t c = data::make_vocab({}).size();
  SUBCASE("oracle lookup predictor scores 1 on every split") {
    for (const auto& split : corpus().eval) {
      CHECK(evaluate([c](const data::TokenBatch& b) { return oracle_logits(b, c); }, split, 0.1, 7) == 1.0);
    }
  }
  SUBCASE("constant predictor on a binary split scores the class prior") {
    std::vector<data::Example> split;
    int ones = 0;
    Rng rng(3);
    for (int i = 0; i < 300; ++i) {
      const bool a = rng.below(2);
      ones += a;
      split.push_back(question(a ? 15 : 14, i));
    }
    const auto constant = [c](const data::TokenBatch& b) {
      Tensor z(Shape{b.n_seq * b.seq_len, c});
      for (std::size_t r = 0; r < z.rows(); ++r) z.at(r, 15) = 1.0;
      return z;
    };
    CHECK(evaluate(constant, split, 0.1) == static_cast<double>(ones) / 300.0);
  }
  SUBCASE("untrained model with 16 classes sits at chance") {
    const model::TinyVlm m = model::build_model(model::tier_config(model::Tier::student, 16, 13, 9, 4));
    std::vector<data::Example> split;
    Rng rng(8);
    const int n = 4000;
    for (int i = 0; i < n; ++i) split.push_back(question(static_cast<std::int32_t>(rng.below(16)), 1000 + i));
    const double p = 1.0 / 16.0;
    const double acc = evaluate(m, split, 0.1);
    CHECK(std::abs(acc - p) <= 3.0 * std::sqrt(p * (1 - p) / n));
  }
  SUBCASE("errors and purity") {
    const model::TinyVlm m =
        model::build_model(model::tier_config(model::Tier::student, c, 21, 9, 4));
    CHECK_THROWS_WITH(evaluate(m, {}, 0.1), doctest::Contains("empty split"));
    const auto before = model::serialize(model::Checkpoint::of(m, {}));
    for (const auto& split : corpus().eval) {
      const double a = evaluate(m, split, 0.1);
      CHECK((a >= 0.0 && a <= 1.0));
    }
    CHECK(model::serialize(model::Checkpoint::of(m, {})) == before);
    const auto wrong = [](const data::TokenBatch&) { return Tensor(Shape{1, 4}); };
    CHECK_THROWS_AS(evaluate(wrong, corpus().eval[0], 0.1), ShapeError);
  }
}

TEST_CASE("aggregate") {
  SUBCASE("one seed has zero stdev") {
    ResultTable t{{make_row("student", "none", 1, {0.1, 0.2, 0.3, 0.4})}};
    const ResultTable a = aggregate(t);
    REQUIRE(a.rows.size() == 2);
    CHECK(a.rows[0].scores == t.rows[0].scores);
    CHECK(a.rows[1].scores == SplitScores{0, 0, 0, 0});
    CHECK(a.rows[1].avg == 0.0);
  }
  SUBCASE("duplicated table returns itself as the mean") {
    Rng rng(4);
    ResultTable base = random_table(rng, 1);
    ResultTable dup = base;
    for (int i = 0; i < 4; ++i) dup.rows.push_back(base.rows[0]);
    const ResultTable a = aggregate(dup);
    CHECK(a.rows[0].scores == base.rows[0].scores);
    CHECK(a.rows[1].scores == SplitScores{0, 0, 0, 0});
  }
  SUBCASE("five hand-made seeds against a spreadsheet recomputation") {
    ResultTable t;
    const double lookup[] = {0.5, 0.6, 0.7, 0.8, 0.9};
    const double counting[] = {0.25, 0.25, 0.5, 0.75, 1.0};
    for (int i = 0; i < 5; ++i) {
      t.rows.push_back(make_row("student", "bottom_up", i, {lookup[i], counting[i], 0.4, 1.0 - lookup[i]}));
      t.rows.push_back(make_row("student", "top_down", i, {0.1, 0.1, 0.1, 0.1}));
    }
    const ResultTable a = aggregate(t);
    REQUIRE(a.rows.size() == 4);
    CHECK(a.rows[0].strategy == "bottom_up");
    CHECK(a.rows[0].seed == "mean");
    CHECK(a.rows[1].seed == "stdev");
    CHECK(a.rows[2].strategy == "top_down");
    // STDEV.S of {0.5 .. 0.9} = sqrt(0.1 / 4); of {0.25, 0.25, 0.5, 0.75, 1} = sqrt(0.425 / 4).
    CHECK(a.rows[0].scores[0] == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(a.rows[1].scores[0] == doctest::Approx(0.15811388300841897).epsilon(1e-14));
    CHECK(a.rows[0].scores[1] == doctest::Approx(0.55).epsilon(1e-15));
    CHECK(a.rows[1].scores[1] == doctest::Approx(0.3259601202601324).epsilon(1e-14));
    CHECK(a.rows[1].scores[2] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(a.rows[0].avg == doctest::Approx((0.7 + 0.55 + 0.4 + 0.3) / 4).epsilon(1e-15));
    // avg per seed: (l + c + 0.4 + 1 - l) / 4 = (c + 1.4) / 4, so its stdev is stdev(c) / 4.
    CHECK(a.rows[1].avg == doctest::Approx(0.3259601202601324 / 4).epsilon(1e-14));
    CHECK(a.rows[3].scores == SplitScores{0, 0, 0, 0});
  }
  SUBCASE("group order follows first appearance") {
    ResultTable t{{make_row("b", "x", 1, {}), make_row("a", "x", 1, {}), make_row("b", "x", 2, {})}};
    const ResultTable a = aggregate(t);
    CHECK(a.rows[0].method == "b");
    CHECK(a.rows[2].method == "a");
  }
}

TEST_CASE("append_delta") {
  ResultTable t{{make_row("s", "bottom_up", 1, {0.5, 0.5, 0.5, 0.5}),
                 make_row("s", "top_down", 1, {0.25, 0.5, 0.75, 0.5})}};
  append_delta(t, 0, 1, "s");
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[2].strategy == "bottom_up-top_down");
  CHECK(t.rows[2].seed == "delta");
  CHECK(t.rows[2].scores == SplitScores{0.25, 0.0, -0.25, 0.0});
  CHECK(t.rows[2].avg == 0.0);
  CHECK_THROWS(append_delta(t, 0, 9, "x"));
}

TEST_CASE("render and parse") {
  SUBCASE("empty tables are header-only") {
    CHECK(render({}, Format::csv) == "method,strategy,seed,lookup,counting,relational,captioning,avg\n");
    CHECK(render({}, Format::json) == "{\"rows\":[\n]}\n");
    const std::string md = render({}, Format::markdown);
    CHECK(std::count(md.begin(), md.end(), '\n') == 2);
    CHECK(md.rfind("| Method | Strategy | Seed | Lookup | Counting | Relational | Captioning | Avg |", 0) == 0);
  }
  SUBCASE("csv round trip is byte-identical") {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
      const ResultTable t = random_table(rng, 1 + rng.below(8));
      const std::string text = render(t, Format::csv);
      const ResultTable back = parse_csv(text);
      CHECK(back == t);
      CHECK(render(back, Format::csv) == text);
    }
  }
  SUBCASE("distinct tables serialise differently") {
    Rng rng(10);
    for (int trial = 0; trial < 500; ++trial) {
      const ResultTable a = random_table(rng, 3);
      ResultTable b = a;
      const std::size_t r = rng.below(3);
      switch (rng.below(3)) {
        case 0: b.rows[r].scores[rng.below(4)] = std::nextafter(a.rows[r].scores[0], 2.0); break;
        case 1: b.rows[r].method += "x"; break;
        default: b.rows[r].avg = std::nextafter(b.rows[r].avg, -1.0); break;
      }
      if (a == b) continue;
      for (Format f : {Format::csv, Format::json, Format::markdown}) CHECK(render(a, f) != render(b, f));
    }
  }
  SUBCASE("reserved characters are rejected") {
    for (const char* bad : {"a,b", "a\"b", "a|b", "a\nb"}) {
      ResultTable t{{make_row(bad, "s", 1, {})}};
      CHECK_THROWS(render(t, Format::csv));
      CHECK_THROWS(render(t, Format::markdown));
    }
  }
  SUBCASE("malformed csv") {
    CHECK_THROWS_WITH(parse_csv(""), doctest::Contains("missing header"));
    CHECK_THROWS_WITH(parse_csv("a,b\n"), doctest::Contains("unexpected header"));
    CHECK_THROWS_WITH(parse_csv(render({}, Format::csv) + "m,s,1,0.1\n"), doctest::Contains("8 fields"));
    CHECK_THROWS_WITH(parse_csv(render({}, Format::csv) + "m,s,1,x,0,0,0,0\n"), doctest::Contains("bad number"));
  }
  SUBCASE("emit_report writes the rendering and fails on bad paths") {
    const auto path = std::filesystem::temp_directory_path() / "ckd_test_report.md";
    const ResultTable t{{make_row("student", "none", 1, {0.5, 0.25, 0.125, 1})}};
    emit_report(t, Format::markdown, path);
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    CHECK(ss.str() == render(t, Format::markdown));
    std::filesystem::remove(path);
    CHECK_THROWS(emit_report(t, Format::csv, "/nonexistent-dir/x/report.csv"));
  }
  SUBCASE("format names") {
    CHECK(format_from_name("md") == Format::markdown);
    CHECK(std::string(format_extension(Format::json)) == "json");
    CHECK_THROWS_AS(format_from_name("xml"), ConfigError);
  }
}
