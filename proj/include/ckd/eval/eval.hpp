#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ckd/data/data.hpp"
#include "ckd/model/model.hpp"

namespace ckd::eval {

/// Greedy exact match over every supervised text token of the split: argmax
/// of z_i must equal the token at i + 1. For question splits that is one
/// answer per question; for captioning every caption token counts.
/// Throws Error on an empty split. The model is not modified.
double evaluate(const model::TinyVlm& model, const std::vector<data::Example>& split, double noise,
                std::size_t batch_size = 64);

/// Anything that maps a batch to logits [n_seq * seq_len, c].
using Predictor = std::function<Tensor(const data::TokenBatch&)>;
double evaluate(const Predictor& predict, const std::vector<data::Example>& split, double noise,
                std::size_t batch_size = 64);

/// Accuracy on lookup, counting, relational and captioning.
using SplitScores = std::array<double, data::kNumSplits>;

SplitScores evaluate_all(const model::TinyVlm& model, const data::Corpus& corpus, double noise);

/// Arithmetic mean of the split scores.
double average(const SplitScores& s);

struct ResultRow {
  std::string method;
  std::string strategy;
  std::string seed;  // seed number, "mean", "stdev" or "delta"
  SplitScores scores{};
  double avg = 0.0;
  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  friend bool operator==(const ResultTable&, const ResultTable&) = default;
};

ResultRow make_row(std::string method, std::string strategy, std::uint64_t seed,
                   const SplitScores& scores);

/// Mean and sample standard deviation per (method, strategy), in order of
/// first appearance. Throws Error if a group is empty.
ResultTable aggregate(const ResultTable& per_seed);

/// Appends a "delta" row: row `a` minus row `b` of the same table.
void append_delta(ResultTable& table, std::size_t a, std::size_t b, const std::string& label);

enum class Format { csv, json, markdown };
Format format_from_name(const std::string& name);
const char* format_extension(Format f);

/// Deterministic serialisation; numbers use the shortest form that
/// round-trips, so distinct tables always serialise differently.
std::string render(const ResultTable& table, Format format);
void emit_report(const ResultTable& table, Format format, const std::filesystem::path& path);
ResultTable parse_csv(const std::string& text);

/// Shortest round-trip decimal form of a double.
std::string format_number(double v);

}  // namespace ckd::eval
