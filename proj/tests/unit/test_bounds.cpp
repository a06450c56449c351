#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ckd/bounds/bounds.hpp"
#include "ckd/util/error.hpp"
#include "ckd/util/rng.hpp"

using namespace ckd;
using namespace ckd::bounds;

namespace {

BoundParams reference_point() {
  BoundParams p;
  p.c_s = 1;
  p.c_t = 8;
  p.n = 1e6;
  p.a_st = 0.6;
  p.eps_s = p.eps_a = p.eps_t = p.eps_sa = p.eps_st = p.eps_sbar = p.eps_sbart = 0.01;
  return p;
}

// A random point inside the assumed ordering, equal eps and capacities.
BoundParams random_assumed(Rng& rng) {
  BoundParams p;
  p.enforce_assumptions = true;
  p.c_s = rng.uniform(0.01, 100);
  p.c_a = rng.uniform(0.01, 100);
  p.c_t = rng.uniform(0.01, 100);
  p.n = std::exp(rng.uniform(0, std::log(1e12)));
  p.k = rng.uniform(0.01, 10);
  p.a_s = rng.uniform(0.5, 1);
  p.a_t = rng.uniform(p.a_s, 1);
  p.a_sbart = rng.uniform(0.5, p.a_t);
  p.a_st = rng.uniform(0.5, p.a_sbart);
  p.a_sbar = rng.uniform(p.a_s, 1);
  p.a_a = rng.uniform(0.5, 1);
  p.a_sa = rng.uniform(0.5, p.a_a);
  p.eps_st = p.eps_sbart = rng.uniform(0, 0.5);
  return p;
}

}  // namespace

TEST_CASE("bound_value") {
  CHECK(bound_value(1, 1, 0.5, 0, 1) == 1.0);
  CHECK(bound_value(2, 100, 1, 0.1, 1) == doctest::Approx(0.12).epsilon(1e-15));
  CHECK(bound_value(3, 400, 0.5, 0) == doctest::Approx(bound_value(3, 100, 0.5, 0) / 2).epsilon(1e-15));
  CHECK_THROWS_AS(bound_value(1, 0.5, 0.5, 0), Error);
  CHECK_THROWS_AS(bound_value(0, 2, 0.5, 0), Error);
  CHECK_THROWS_AS(bound_value(1, 2, 0.49, 0), Error);
  CHECK_THROWS_AS(bound_value(1, 2, 1.01, 0), Error);
  CHECK_THROWS_AS(bound_value(1, 2, 0.7, -1e-9), Error);
  CHECK_THROWS_AS(bound_value(1, 2, 0.7, 0, 0), Error);
}

TEST_CASE("bound_value monotonicity on 1e5 random triples") {
  Rng rng(17);
  for (int i = 0; i < 100000; ++i) {
    double n1 = std::exp(rng.uniform(0.01, 25)), n2 = std::exp(rng.uniform(0.01, 25));
    double a1 = rng.uniform(0.5, 1), a2 = rng.uniform(0.5, 1);
    double c1 = rng.uniform(0.01, 100), c2 = rng.uniform(0.01, 100);
    if (n1 > n2) std::swap(n1, n2);
    if (a1 > a2) std::swap(a1, a2);
    if (c1 > c2) std::swap(c1, c2);
    const double a = rng.uniform(0.5, 1), c = rng.uniform(0.01, 100), n = std::exp(rng.uniform(0.01, 25));
    const double eps = rng.uniform(0, 1), k = rng.uniform(0.1, 10);
    // Strict without eps, non-strict once eps can absorb the difference.
    if (n1 < n2) CHECK(bound_value(c, n1, a, 0, k) > bound_value(c, n2, a, 0, k));
    if (a1 < a2) CHECK(bound_value(c, n, a1, 0, k) > bound_value(c, n, a2, 0, k));
    if (c1 < c2) CHECK(bound_value(c1, n, a, 0, k) < bound_value(c2, n, a, 0, k));
    CHECK(bound_value(c, n1, a, eps, k) >= bound_value(c, n2, a, eps, k));
    CHECK(bound_value(c, n, a1, eps, k) >= bound_value(c, n, a2, eps, k));
    CHECK(bound_value(c1, n, a, eps, k) <= bound_value(c2, n, a, eps, k));
    CHECK(bound_value(c, n, a, eps, k) < bound_value(c, n, a, eps + 0.5, k));
    CHECK(bound_value(c, n, a, 0, k) < bound_value(c, n, a, 0, k * 1.5));
  }
}

TEST_CASE("kd_bound") {
  SUBCASE("reference point by hand") {
    // 9 / 10^3.6 + 0.01 + 0.01, evaluated to 40 digits offline.
    CHECK(kd_bound(reference_point(), Pair::student_teacher) ==
          doctest::Approx(0.02226069778835862209997652886).epsilon(1e-14));
  }
  SUBCASE("student-TA mirrors student-teacher under relabelling") {
    BoundParams p = reference_point();
    p.c_a = p.c_t;
    p.a_sa = p.a_st;
    p.eps_sa = 0.03;
    p.eps_a = 0.04;
    BoundParams q = p;
    q.eps_st = 0.03;
    q.eps_t = 0.04;
    CHECK(kd_bound(p, Pair::student_ta) == kd_bound(q, Pair::student_teacher));
  }
  SUBCASE("tends to the eps sum as n grows") {
    BoundParams p = reference_point();
    p.n = 1e300;
    CHECK(kd_bound(p, Pair::distilled_teacher) == doctest::Approx(0.02).epsilon(1e-15));
  }
  SUBCASE("distilled capacity defaults to the student's") {
    BoundParams p = reference_point();
    p.a_sbart = p.a_st;
    p.eps_sbart = p.eps_st;
    CHECK(kd_bound(p, Pair::distilled_teacher) == kd_bound(p, Pair::student_teacher));
    p.c_sbar = 5.0;
    CHECK(kd_bound(p, Pair::distilled_teacher) > kd_bound(p, Pair::student_teacher));
  }
}

TEST_CASE("BoundParams validation") {
  BoundParams p;
  CHECK_NOTHROW(p.validate());
  p.a_st = 0.4;
  CHECK_THROWS_WITH(p.validate(), doctest::Contains("bounds.a_st"));
  p = {};
  p.eps_t = -1;
  CHECK_THROWS_WITH(p.validate(), doctest::Contains("bounds.eps_t"));
  p = {};
  p.n = 0.5;
  CHECK_THROWS_WITH(p.validate(), doctest::Contains("bounds.n"));
  p = {};
  p.a_st = 0.9;  // above a_sbart
  CHECK_NOTHROW(p.validate());
  p.enforce_assumptions = true;
  CHECK_THROWS_WITH(p.validate(), doctest::Contains("a_st <= a_sbart"));
}

TEST_CASE("ckd_wins") {
  SUBCASE("equality case has zero margin") {
    BoundParams p;
    p.a_st = p.a_sbart = 0.6;
    const Verdict v = ckd_wins(p);
    CHECK(v.holds);
    CHECK(v.margin == 0.0);
  }
  SUBCASE("faster distilled rate wins at n = 1e6") {
    BoundParams p;
    p.a_st = 0.5;
    p.a_sbart = 0.7;
    p.c_s = 1;
    p.c_t = 8;
    p.eps_st = p.eps_sbart = 0.01;
    const Verdict v = ckd_wins(p);
    CHECK(v.holds);
    // 9/1e3 - 9/10^4.2 computed offline.
    CHECK(v.margin == doctest::Approx(0.008432138389967826).epsilon(1e-13));
  }
  SUBCASE("large eps on the cascaded side with tiny n loses") {
    BoundParams p;
    p.n = 2;
    p.a_st = 0.5;
    p.a_sbart = 0.7;
    p.eps_st = 0.0;
    p.eps_sbart = 5.0;
    CHECK_FALSE(ckd_wins(p).holds);
  }
  SUBCASE("holds everywhere under the assumptions, 1e4 random points") {
    Rng rng(23);
    for (int i = 0; i < 10000; ++i) {
      const BoundParams p = random_assumed(rng);
      REQUIRE_FALSE(p.violated_assumption());
      CHECK(ckd_wins(p).holds);
    }
  }
}

TEST_CASE("regime_sweep") {
  SUBCASE("single point") {
    SweepSpec s;
    const SweepResult r = regime_sweep(s);
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].verdict.holds == ckd_wins(s.base).holds);
  }
  SUBCASE("enforced region with equal eps holds everywhere") {
    SweepSpec s;
    s.base.enforce_assumptions = true;
    for (int i = 0; i < 25; ++i) s.n.push_back(std::pow(10.0, i * 0.5));
    for (int i = 0; i <= 10; ++i) s.a_st.push_back(0.5 + 0.05 * i);
    for (int i = 0; i <= 10; ++i) s.a_sbart.push_back(0.5 + 0.05 * i);
    s.c_t = {1, 8, 64};
    s.eps_st = s.eps_sbart = {0.0};
    s.base.a_t = 1.0;
    const SweepResult r = regime_sweep(s);
    CHECK(r.records.size() + r.skipped == 25 * 11 * 11 * 3);
    CHECK(r.skipped > 0);
    CHECK(r.holds_fraction == 1.0);
    CHECK(r.flips == 0);
  }
  SUBCASE("larger distilled capacity flips once along n") {
    SweepSpec s;
    s.base.enforce_assumptions = true;
    s.base.a_t = 1.0;
    for (int i = 0; i < 100; ++i) s.n.push_back(std::pow(10.0, i * 0.12));
    s.a_st = {0.5, 0.55, 0.6};
    s.a_sbart = {0.65, 0.8, 1.0};
    s.c_sbar = {2, 4, 16, 64};
    s.c_t = {1, 8};
    s.eps_st = s.eps_sbart = {0.02};
    const SweepResult r = regime_sweep(s);
    REQUIRE(r.records.size() == 100 * 3 * 3 * 4 * 2);
    CHECK(r.holds_fraction > 0.0);
    CHECK(r.holds_fraction < 1.0);
    // Along n, with the other coordinates fixed, holds never switches back off.
    for (std::size_t lo = 0; lo < r.records.size(); lo += 100) {
      int flips = 0;
      for (std::size_t i = lo + 1; i < lo + 100; ++i) {
        CHECK(r.records[i].verdict.holds >= r.records[i - 1].verdict.holds);
        flips += r.records[i].flip;
      }
      CHECK(flips <= 1);
    }
  }
  SUBCASE("csv has one line per record") {
    SweepSpec s;
    s.n = {1, 10, 100};
    const std::string csv = sweep_csv(regime_sweep(s));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv.rfind("n,a_st,", 0) == 0);
  }
}
