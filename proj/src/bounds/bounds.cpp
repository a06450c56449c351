#include "ckd/bounds/bounds.hpp"

#include <cmath>
#include <sstream>

#include "ckd/eval/eval.hpp"
#include "ckd/util/error.hpp"

namespace ckd::bounds {

namespace {

void check_exponent(double a, const char* name) {
  if (!(a >= 0.5 && a <= 1.0)) throw ConfigError(std::string("bounds.") + name, "must lie in [0.5, 1]");
}

void check_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("bounds.") + name, "must be positive");
}

void check_eps(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string("bounds.") + name, "must be nonnegative");
}

}  // namespace

void BoundParams::validate() const {
  check_positive(c_s, "c_s");
  check_positive(c_a, "c_a");
  check_positive(c_t, "c_t");
  check_positive(capacity_sbar(), "c_sbar");
  check_positive(k, "k");
  if (!(n >= 1.0) || !std::isfinite(n)) throw ConfigError("bounds.n", "must be at least 1");
  check_exponent(a_s, "a_s");
  check_exponent(a_a, "a_a");
  check_exponent(a_t, "a_t");
  check_exponent(a_sa, "a_sa");
  check_exponent(a_st, "a_st");
  check_exponent(a_sbar, "a_sbar");
  check_exponent(a_sbart, "a_sbart");
  check_eps(eps_s, "eps_s");
  check_eps(eps_a, "eps_a");
  check_eps(eps_t, "eps_t");
  check_eps(eps_sa, "eps_sa");
  check_eps(eps_st, "eps_st");
  check_eps(eps_sbar, "eps_sbar");
  check_eps(eps_sbart, "eps_sbart");
  if (enforce_assumptions) {
    if (auto v = violated_assumption()) throw ConfigError("bounds.enforce_assumptions", *v);
  }
}

std::optional<std::string> BoundParams::violated_assumption() const {
  if (!(a_t >= a_s)) return "a_t >= a_s violated";
  if (!(a_sa <= a_a)) return "a_sa <= a_a violated";
  if (!(a_sbart <= a_t)) return "a_sbart <= a_t violated";
  if (!(a_s <= a_sbar)) return "a_s <= a_sbar violated";
  if (!(a_st <= a_sbart)) return "a_st <= a_sbart violated";
  return std::nullopt;
}

double bound_value(double c, double n, double a, double eps, double k) {
  if (!(n >= 1.0)) throw Error("bound_value: n must be at least 1");
  if (!(c > 0.0)) throw Error("bound_value: capacity must be positive");
  if (!(a >= 0.5 && a <= 1.0)) throw Error("bound_value: exponent must lie in [0.5, 1]");
  if (!(eps >= 0.0)) throw Error("bound_value: eps must be nonnegative");
  if (!(k > 0.0)) throw Error("bound_value: K must be positive");
  return k * c / std::pow(n, a) + eps;
}

const char* pair_name(Pair p) {
  switch (p) {
    case Pair::student_teacher: return "student_teacher";
    case Pair::student_ta: return "student_ta";
    case Pair::distilled_teacher: return "distilled_teacher";
  }
  return "?";
}

double kd_bound(const BoundParams& p, Pair pair) {
  p.validate();
  switch (pair) {
    case Pair::student_teacher: return bound_value(p.c_s + p.c_t, p.n, p.a_st, p.eps_st, p.k) + p.eps_t;
    case Pair::student_ta: return bound_value(p.c_s + p.c_a, p.n, p.a_sa, p.eps_sa, p.k) + p.eps_a;
    case Pair::distilled_teacher:
      return bound_value(p.capacity_sbar() + p.c_t, p.n, p.a_sbart, p.eps_sbart, p.k) + p.eps_t;
  }
  throw Error("kd_bound: unknown pair");
}

Verdict ckd_wins(const BoundParams& p) {
  p.validate();
  Verdict v;
  v.lhs = bound_value(p.capacity_sbar() + p.c_t, p.n, p.a_sbart, p.eps_sbart, p.k);
  v.rhs = bound_value(p.c_s + p.c_t, p.n, p.a_st, p.eps_st, p.k);
  v.holds = v.lhs <= v.rhs;
  v.margin = v.rhs - v.lhs;
  return v;
}

SweepResult regime_sweep(const SweepSpec& spec) {
  auto axis = [](const std::vector<double>& v, double base) {
    return v.empty() ? std::vector<double>{base} : v;
  };
  const BoundParams& b = spec.base;
  const auto ns = axis(spec.n, b.n);
  const auto ast = axis(spec.a_st, b.a_st);
  const auto asbt = axis(spec.a_sbart, b.a_sbart);
  const auto csb = axis(spec.c_sbar, b.capacity_sbar());
  const auto ct = axis(spec.c_t, b.c_t);
  const auto est = axis(spec.eps_st, b.eps_st);
  const auto esbt = axis(spec.eps_sbart, b.eps_sbart);
  const auto ks = axis(spec.k, b.k);

  SweepResult r;
  std::size_t holds = 0;
  for (double k : ks)
    for (double e2 : esbt)
      for (double e1 : est)
        for (double c2 : ct)
          for (double c1 : csb)
            for (double a2 : asbt)
              for (double a1 : ast) {
                std::optional<bool> prev;
                for (double n : ns) {
                  BoundParams p = b;
                  p.n = n;
                  p.a_st = a1;
                  p.a_sbart = a2;
                  p.c_sbar = c1;
                  p.c_t = c2;
                  p.eps_st = e1;
                  p.eps_sbart = e2;
                  p.k = k;
                  if (p.enforce_assumptions && p.violated_assumption()) {
                    ++r.skipped;
                    continue;
                  }
                  SweepRecord rec{p, ckd_wins(p), false};
                  rec.flip = prev && *prev != rec.verdict.holds;
                  r.flips += rec.flip;
                  holds += rec.verdict.holds;
                  prev = rec.verdict.holds;
                  r.records.push_back(rec);
                }
              }
  r.holds_fraction =
      r.records.empty() ? 0.0 : static_cast<double>(holds) / static_cast<double>(r.records.size());
  return r;
}

std::string sweep_csv(const SweepResult& r) {
  using eval::format_number;
  std::ostringstream os;
  os << "n,a_st,a_sbart,c_s,c_sbar,c_t,eps_st,eps_sbart,k,lhs,rhs,margin,holds,flip\n";
  for (const SweepRecord& rec : r.records) {
    const BoundParams& p = rec.params;
    for (double v : {p.n, p.a_st, p.a_sbart, p.c_s, p.capacity_sbar(), p.c_t, p.eps_st, p.eps_sbart,
                     p.k, rec.verdict.lhs, rec.verdict.rhs, rec.verdict.margin}) {
      os << format_number(v) << ',';
    }
    os << (rec.verdict.holds ? 1 : 0) << ',' << (rec.flip ? 1 : 0) << '\n';
  }
  return os.str();
}

}  // namespace ckd::bounds
