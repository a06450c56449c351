#include "ckd/data/vocab.hpp"

#include <algorithm>

#include "ckd/util/error.hpp"

namespace ckd::data {

namespace {
constexpr const char* kColors[kNumColors] = {"red", "green", "blue", "yellow"};
constexpr const char* kShapes[kNumShapes] = {"circle", "square", "triangle", "cross"};
constexpr const char* kNumbers[] = {"zero", "one", "two", "three", "four", "five",
                                    "six", "seven", "eight", "nine"};
constexpr const char* kSpecials[] = {"<pad>",      "<img>",      "<eos>",       "<caption>",
                                     "<color_of>", "<shape_at>", "<count>",     "<right_of>",
                                     "<below>",    "none"};
}  // namespace

const char* color_name(int c) { return kColors[c]; }
const char* shape_name(int s) { return kShapes[s]; }

Vocab::Vocab(std::uint32_t grid_size, std::uint32_t max_count)
    : grid_(grid_size), max_count_(max_count) {
  if (grid_size == 0) throw ConfigError("grid", "must be positive");
  if (max_count > 9) throw ConfigError("max_objects", "at most 9 countable objects");
  names_.assign(std::begin(kSpecials), std::end(kSpecials));
  for (const char* c : kColors) names_.emplace_back(c);
  for (const char* s : kShapes) names_.emplace_back(s);
  for (std::uint32_t n = 0; n <= max_count; ++n) names_.emplace_back(kNumbers[n]);
  for (std::uint32_t k = 0; k < grid_size * grid_size; ++k) {
    names_.push_back("cell" + std::to_string(k / grid_size) + std::to_string(k % grid_size));
  }
}

std::int32_t Vocab::color(int c) const { return n_specials + c; }
std::int32_t Vocab::shape(int s) const { return n_specials + kNumColors + s; }

std::int32_t Vocab::number(int n) const {
  if (n < 0 || static_cast<std::uint32_t>(n) > max_count_) {
    throw Error("count " + std::to_string(n) + " has no number token");
  }
  return n_specials + kNumColors + kNumShapes + n;
}

std::int32_t Vocab::cell(int k) const {
  return n_specials + kNumColors + kNumShapes + static_cast<std::int32_t>(max_count_) + 1 + k;
}

const std::string& Vocab::name(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size()) {
    throw Error("token id " + std::to_string(id) + " outside vocabulary");
  }
  return names_[static_cast<std::size_t>(id)];
}

std::int32_t Vocab::id(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw Error("unknown token '" + name + "'");
  return static_cast<std::int32_t>(it - names_.begin());
}

}  // namespace ckd::data
