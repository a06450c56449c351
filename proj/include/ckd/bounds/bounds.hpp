#pragma once

#include <optional>
#include <string>
#include <vector>

namespace ckd::bounds {

/// Symbols of the generalization-bound argument. Suffixes: s student, a TA,
/// t teacher, sa student from TA, st student from teacher, sbar distilled
/// student, sbart distilled student from teacher.
struct BoundParams {
  double c_s = 1.0;
  double c_a = 4.0;
  double c_t = 8.0;
  std::optional<double> c_sbar;  // defaults to c_s
  double n = 1e6;

  double a_s = 0.5, a_a = 0.6, a_t = 0.7;
  double a_sa = 0.55, a_st = 0.55, a_sbar = 0.6, a_sbart = 0.6;

  double eps_s = 0.01, eps_a = 0.01, eps_t = 0.01;
  double eps_sa = 0.01, eps_st = 0.01, eps_sbar = 0.01, eps_sbart = 0.01;

  double k = 1.0;  // shared constant hidden in O(.)
  bool enforce_assumptions = false;

  double capacity_sbar() const { return c_sbar.value_or(c_s); }

  /// Domain checks always; ordering assumptions only when enforced.
  /// Throws ConfigError naming the field.
  void validate() const;
  /// The ordering assumptions a_s <= a_t, a_sa <= a_a, a_sbart <= a_t,
  /// a_s <= a_sbar and a_st <= a_sbart, or the first one violated.
  std::optional<std::string> violated_assumption() const;
};

/// K * C / n^a + eps. Throws Error outside n >= 1, C > 0, a in [0.5, 1],
/// eps >= 0, K > 0.
double bound_value(double c, double n, double a, double eps, double k = 1.0);

enum class Pair { student_teacher, student_ta, distilled_teacher };
const char* pair_name(Pair p);

/// Combined bound for a distillation pair:
///   student_teacher    K (C_s + C_t) / n^a_st + eps_st + eps_t
///   student_ta         K (C_s + C_a) / n^a_sa + eps_sa + eps_a
///   distilled_teacher  K (C_sbar + C_t) / n^a_sbart + eps_sbart + eps_t
double kd_bound(const BoundParams& p, Pair pair);

struct Verdict {
  bool holds = false;
  double lhs = 0.0;     // distilled student vs teacher, without eps_t
  double rhs = 0.0;     // student vs teacher, without eps_t
  double margin = 0.0;  // rhs - lhs
};

/// Whether the cascaded bound is no worse than direct distillation.
Verdict ckd_wins(const BoundParams& p);

/// Grid over a few axes; an empty axis keeps the base value. n varies
/// fastest so consecutive records along n share every other coordinate.
struct SweepSpec {
  BoundParams base;
  std::vector<double> n, a_st, a_sbart, c_sbar, c_t, eps_st, eps_sbart, k;
};

struct SweepRecord {
  BoundParams params;
  Verdict verdict;
  bool flip = false;  // holds differs from the previous n at the same other coordinates
};

struct SweepResult {
  std::vector<SweepRecord> records;
  std::size_t skipped = 0;  // grid points outside the assumptions when enforced
  double holds_fraction = 0.0;
  std::size_t flips = 0;
};

/// Evaluates ckd_wins at every grid point. With base.enforce_assumptions,
/// points that violate an assumption are skipped and counted.
SweepResult regime_sweep(const SweepSpec& spec);

/// One line per record: n, exponents, capacities, eps, lhs, rhs, margin,
/// holds, flip. Shortest round-trip numbers.
std::string sweep_csv(const SweepResult& r);

}  // namespace ckd::bounds
