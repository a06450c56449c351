#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ckd/data/vocab.hpp"
#include "ckd/util/rng.hpp"

namespace ckd::data {

/// Each grid cell is rendered as a 3x3 RGB patch.
inline constexpr std::size_t kPatchDim = 27;

struct Object {
  int shape = 0;
  int color = 0;
  int cell = 0;
  friend bool operator==(const Object&, const Object&) = default;
};

struct SceneSpec {
  std::uint32_t grid = 3;
  std::vector<Object> objects;  // sorted by cell
  std::uint64_t seed = 0;       // drives the pixel noise

  /// Throws Error on overlapping cells or out-of-range ids.
  void validate() const;
  const Object* at(int cell) const;
  /// Hash of grid and objects (not the noise seed).
  std::uint64_t signature() const;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct SceneParams {
  std::uint32_t grid = 3;
  std::uint32_t min_objects = 3;
  std::uint32_t max_objects = 5;
  double noise = 0.1;
};

/// Longest example: g*g visual tokens, then caption, two tokens per object, eos.
inline std::size_t max_sequence_length(const SceneParams& p) {
  return std::size_t{p.grid} * p.grid + 2 + 2 * std::size_t{p.max_objects};
}

struct Scene {
  SceneSpec spec;
  std::vector<double> patches;  // grid^2 x kPatchDim, raster order
};

Scene gen_scene(std::uint64_t seed, const SceneParams& params = {});
/// Deterministic pixels of a spec; the noise comes from spec.seed.
std::vector<double> render_patches(const SceneSpec& spec, double noise);

enum class Task { caption, color_of, shape_at, count_color, right_of, below };
inline constexpr int kNumTasks = 6;

/// Benchmark split a task belongs to.
enum class Split { lookup, counting, relational, captioning };
inline constexpr int kNumSplits = 4;
inline constexpr std::array<Split, kNumSplits> kAllSplits{Split::lookup, Split::counting,
                                                          Split::relational, Split::captioning};

Split split_of(Task t);
const char* task_name(Task t);
const char* split_name(Split s);
Task task_from_name(const std::string& name);

/// One instance: visual tokens followed by `text`. `supervised[j]` marks the
/// text tokens that are prediction targets (the answer, or the caption body).
struct Example {
  SceneSpec scene;
  Task task = Task::caption;
  std::vector<std::int32_t> text;
  std::vector<std::uint8_t> supervised;

  std::size_t length() const noexcept;  // visual + text
  friend bool operator==(const Example&, const Example&) = default;
};

/// Caption: [caption, (color, shape) per object in raster order..., eos].
Example gen_caption_pair(const SceneSpec& scene, const Vocab& vocab);

/// Question of a given task: [q_token, argument, answer, eos] with only the
/// answer supervised. Returns nullopt when the scene admits no such question
/// (for example no uniquely colored object for a relational query).
std::optional<Example> gen_instruction_pair(const SceneSpec& scene, Task task, const Vocab& vocab,
                                            Rng& rng);

/// Answer token computed symbolically from the scene, independent of the
/// generator's bookkeeping. Throws Error for unanswerable questions.
std::int32_t oracle_answer(const SceneSpec& scene, std::int32_t q_token, std::int32_t argument,
                           const Vocab& vocab);

/// Padded batch. Row b*seq_len + i of `tokens` is the class of position i;
/// visual positions carry the img token and padding the pad token.
struct TokenBatch {
  std::size_t n_seq = 0;
  std::size_t seq_len = 0;
  std::size_t n_visual = 0;
  std::vector<double> patches;  // n_seq * n_visual * kPatchDim
  std::vector<std::int32_t> tokens;
  std::vector<std::uint8_t> relevance;
};

/// Position i is relevant when it is visual or token i+1 is supervised.
TokenBatch make_batch(std::span<const Example* const> examples, double noise);
TokenBatch make_batch(std::span<const Example> examples, double noise);

struct CorpusConfig {
  SceneParams scene;
  std::size_t n_caption_pairs = 4000;
  std::size_t n_instruction_pairs = 8000;
  std::size_t n_eval_per_split = 400;
  /// Share of caption instances mixed into the instruction corpus.
  double instruction_caption_share = 0.2;
  /// Relative frequencies of lookup, counting and relational questions.
  std::array<double, 3> question_mix{1.0, 1.0, 1.0};
  /// Fraction of signature buckets reserved for evaluation scenes.
  double eval_bucket_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct Corpus {
  std::vector<Example> captions;      // caption pairs
  std::vector<Example> instructions;  // instruction pairs
  std::array<std::vector<Example>, kNumSplits> eval;
};

Vocab make_vocab(const SceneParams& params);
/// Pure function of the config. Train and eval scenes come from disjoint
/// signature buckets.
Corpus build_corpus(const CorpusConfig& config);
bool is_eval_scene(const SceneSpec& spec, double eval_bucket_fraction);

/// Line-delimited records: one JSON object per example with the split tag.
void write_jsonl(std::ostream& os, const Corpus& corpus, const Vocab& vocab);
Corpus read_jsonl(std::istream& is, const Vocab& vocab);

}  // namespace ckd::data
