#include "ckd/eval/eval.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "ckd/util/error.hpp"

namespace ckd::eval {

namespace {

constexpr const char* kColumns[] = {"method", "strategy", "seed", "lookup", "counting",
                                    "relational", "captioning", "avg"};

std::string checked_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r|") != std::string::npos) {
    throw Error("report field '" + s + "' contains a reserved character");
  }
  return s;
}

double parse_number(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw Error("bad number '" + s + "' in csv");
  return v;
}

std::string json_number(double v) { return std::isfinite(v) ? format_number(v) : "null"; }

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf, ptr);
}

double evaluate(const Predictor& predict, const std::vector<data::Example>& split, double noise,
                std::size_t batch_size) {
  if (split.empty()) throw Error("evaluate: empty split");
  std::size_t correct = 0, total = 0;
  for (std::size_t lo = 0; lo < split.size(); lo += batch_size) {
    const std::size_t hi = std::min(split.size(), lo + batch_size);
    std::vector<const data::Example*> ptrs;
    for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&split[i]);
    const data::TokenBatch b = data::make_batch(ptrs, noise);
    const Tensor logits = predict(b);
    if (logits.rows() != b.n_seq * b.seq_len) throw ShapeError("evaluate: predictor returned wrong row count");
    const std::size_t c = logits.cols();
    for (std::size_t s = 0; s < b.n_seq; ++s) {
      for (std::size_t i = b.n_visual; i + 1 < b.seq_len; ++i) {
        const std::size_t r = s * b.seq_len + i;
        if (!b.relevance[r]) continue;
        const double* z = logits.ptr() + r * c;
        const auto pred = static_cast<std::int32_t>(std::max_element(z, z + c) - z);
        correct += pred == b.tokens[r + 1];
        ++total;
      }
    }
  }
  if (total == 0) throw Error("evaluate: split has no supervised tokens");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double evaluate(const model::TinyVlm& m, const std::vector<data::Example>& split, double noise,
                std::size_t batch_size) {
  return evaluate([&m](const data::TokenBatch& b) { return m.forward(b).logits; }, split, noise,
                  batch_size);
}

SplitScores evaluate_all(const model::TinyVlm& m, const data::Corpus& corpus, double noise) {
  SplitScores s{};
  for (int i = 0; i < data::kNumSplits; ++i) s[i] = evaluate(m, corpus.eval[i], noise);
  return s;
}

double average(const SplitScores& s) {
  double t = 0.0;
  for (double v : s) t += v;
  return t / static_cast<double>(s.size());
}

ResultRow make_row(std::string method, std::string strategy, std::uint64_t seed,
                   const SplitScores& scores) {
  return ResultRow{std::move(method), std::move(strategy), std::to_string(seed), scores,
                   average(scores)};
}

ResultTable aggregate(const ResultTable& per_seed) {
  std::vector<std::pair<std::string, std::string>> keys;
  for (const ResultRow& r : per_seed.rows) {
    const std::pair key{r.method, r.strategy};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  ResultTable out;
  for (const auto& [method, strategy] : keys) {
    std::vector<const ResultRow*> group;
    for (const ResultRow& r : per_seed.rows) {
      if (r.method == method && r.strategy == strategy) group.push_back(&r);
    }
    const double n = static_cast<double>(group.size());
    ResultRow mean{method, strategy, "mean", {}, 0.0};
    ResultRow sd{method, strategy, "stdev", {}, 0.0};
    auto column = [&](auto get) {
      double mu = 0.0;
      for (const ResultRow* r : group) mu += get(*r);
      mu /= n;
      double ss = 0.0;
      for (const ResultRow* r : group) ss += (get(*r) - mu) * (get(*r) - mu);
      return std::pair{mu, group.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
    };
    for (int i = 0; i < data::kNumSplits; ++i) {
      std::tie(mean.scores[i], sd.scores[i]) = column([i](const ResultRow& r) { return r.scores[i]; });
    }
    mean.avg = average(mean.scores);
    sd.avg = column([](const ResultRow& r) { return r.avg; }).second;
    out.rows.push_back(mean);
    out.rows.push_back(sd);
  }
  return out;
}

void append_delta(ResultTable& table, std::size_t a, std::size_t b, const std::string& label) {
  if (a >= table.rows.size() || b >= table.rows.size()) throw Error("append_delta: bad row index");
  const ResultRow& ra = table.rows[a];
  const ResultRow& rb = table.rows[b];
  ResultRow d{label, ra.strategy + "-" + rb.strategy, "delta", {}, ra.avg - rb.avg};
  for (int i = 0; i < data::kNumSplits; ++i) d.scores[i] = ra.scores[i] - rb.scores[i];
  table.rows.push_back(d);
}

Format format_from_name(const std::string& name) {
  if (name == "csv") return Format::csv;
  if (name == "json") return Format::json;
  if (name == "markdown" || name == "md") return Format::markdown;
  throw ConfigError("format", "unknown report format '" + name + "' (csv, json, markdown)");
}

const char* format_extension(Format f) {
  switch (f) {
    case Format::csv: return "csv";
    case Format::json: return "json";
    case Format::markdown: return "md";
  }
  return "txt";
}

std::string render(const ResultTable& table, Format format) {
  std::ostringstream os;
  switch (format) {
    case Format::csv: {
      for (int i = 0; i < 8; ++i) os << (i ? "," : "") << kColumns[i];
      os << '\n';
      for (const ResultRow& r : table.rows) {
        os << checked_field(r.method) << ',' << checked_field(r.strategy) << ','
           << checked_field(r.seed);
        for (double v : r.scores) os << ',' << format_number(v);
        os << ',' << format_number(r.avg) << '\n';
      }
      break;
    }
    case Format::json: {
      os << "{\"rows\":[";
      for (std::size_t k = 0; k < table.rows.size(); ++k) {
        const ResultRow& r = table.rows[k];
        os << (k ? "," : "") << "\n{\"method\":" << nlohmann::json(r.method).dump()
           << ",\"strategy\":" << nlohmann::json(r.strategy).dump()
           << ",\"seed\":" << nlohmann::json(r.seed).dump();
        for (int i = 0; i < data::kNumSplits; ++i) {
          os << ",\"" << kColumns[3 + i] << "\":" << json_number(r.scores[i]);
        }
        os << ",\"avg\":" << json_number(r.avg) << '}';
      }
      os << "\n]}\n";
      break;
    }
    case Format::markdown: {
      os << "| Method | Strategy | Seed | Lookup | Counting | Relational | Captioning | Avg |\n"
         << "|---|---|---|---:|---:|---:|---:|---:|\n";
      for (const ResultRow& r : table.rows) {
        os << "| " << checked_field(r.method) << " | " << checked_field(r.strategy) << " | "
           << checked_field(r.seed);
        for (double v : r.scores) os << " | " << format_number(v);
        os << " | " << format_number(r.avg) << " |\n";
      }
      break;
    }
  }
  return os.str();
}

void emit_report(const ResultTable& table, Format format, const std::filesystem::path& path) {
  const std::string text = render(table, format);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write report " + path.string());
  os << text;
  if (!os) throw Error("failed writing report " + path.string());
}

ResultTable parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw Error("csv: missing header");
  std::string header;
  for (int i = 0; i < 8; ++i) header += std::string(i ? "," : "") + kColumns[i];
  if (line != header) throw Error("csv: unexpected header '" + line + "'");
  ResultTable t;
  while (std::getline(is, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw Error("csv: expected 8 fields in '" + line + "'");
    ResultRow r{f[0], f[1], f[2], {}, parse_number(f[7])};
    for (int i = 0; i < data::kNumSplits; ++i) r.scores[i] = parse_number(f[3 + i]);
    t.rows.push_back(r);
  }
  return t;
}

}  // namespace ckd::eval
