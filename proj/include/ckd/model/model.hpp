#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ckd/autodiff/tape.hpp"
#include "ckd/data/data.hpp"
#include "ckd/losses/losses.hpp"

namespace ckd::model {

enum class Tier { student, assistant, teacher };

const char* tier_name(Tier t);
Tier tier_from_name(const std::string& name);

struct ModelConfig {
  std::size_t d_embed = 16;    // d: width of the embeddings fed to the backbone
  std::size_t vocab_size = 0;  // c
  std::size_t max_seq = 0;     // k
  std::size_t n_visual = 9;    // m
  std::size_t n_layers = 1;
  std::size_t n_heads = 2;
  std::size_t d_hidden = 16;
  std::size_t d_vision = 16;   // patch encoder output width
  std::size_t patch_dim = data::kPatchDim;
  Tier tier = Tier::student;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the violated invariant.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Preset sizes. Each tier doubles layers, width and heads of the one below.
ModelConfig tier_config(Tier tier, std::size_t vocab_size, std::size_t max_seq,
                        std::size_t n_visual, std::uint64_t seed);

enum class Part : std::uint8_t { encoder = 1, connector = 2, backbone = 4, head = 8 };

/// Bit set of model parts.
class Parts {
 public:
  constexpr Parts() = default;
  constexpr Parts(Part p) : bits_(static_cast<std::uint8_t>(p)) {}
  constexpr Parts operator|(Parts o) const { return Parts(bits_ | o.bits_); }
  constexpr bool has(Part p) const { return bits_ & static_cast<std::uint8_t>(p); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t bits() const { return bits_; }
  friend constexpr bool operator==(Parts, Parts) = default;
  std::string str() const;

 private:
  constexpr explicit Parts(int bits) : bits_(static_cast<std::uint8_t>(bits)) {}
  std::uint8_t bits_ = 0;
};

constexpr Parts operator|(Part a, Part b) { return Parts(a) | Parts(b); }

/// Patch encoder -> connector -> causal transformer backbone -> vocab head.
///
/// The encoder maps each 27-value patch through a two-layer GELU MLP, the
/// connector is a two-layer GELU MLP into the embedding width, and the
/// backbone is a pre-norm decoder with learned absolute positions. Visual
/// embeddings replace the token embeddings at the first m positions.
class TinyVlm {
 public:
  explicit TinyVlm(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<ad::Parameter>& params() noexcept { return params_; }
  const std::vector<ad::Parameter>& params() const noexcept { return params_; }
  ad::Parameter& param(const std::string& name);
  const ad::Parameter& param(const std::string& name) const;
  Part part_of(const ad::Parameter& p) const;

  std::size_t parameter_count() const;
  std::size_t parameter_count(Parts parts) const;

  /// Only parameters of `parts` will receive gradients.
  void set_trainable(Parts parts);
  Parts trainable_parts() const;
  void zero_grad();

  /// Copy the parameters of one part from a model with the same shapes there.
  void load_part(const TinyVlm& from, Part part);

  /// Recorded forward pass; returns logits [n_seq * seq_len, c].
  ad::Var forward(ad::Tape& tape, const data::TokenBatch& batch) const;
  /// Inference forward pass.
  losses::LogitBundle forward(const data::TokenBatch& batch) const;

 private:
  const ad::Parameter& p(std::size_t i) const { return params_[i]; }

  ModelConfig config_;
  std::vector<ad::Parameter> params_;
  std::vector<Part> parts_;
};

TinyVlm build_model(const ModelConfig& config);

/// Wrap logits of a batch with its layout and mask.
losses::LogitBundle make_bundle(const data::TokenBatch& batch, Tensor logits);

/// Patch encoder alone, as used by the reconstruction pretraining.
ad::Var encode_patches(ad::Tape& tape, const TinyVlm& model, const data::TokenBatch& batch);

struct Provenance {
  std::string step;     // PT, FT, DPT, SFT, DFT, or ENC for encoder pretraining
  int stage = 0;        // cascade stage, 0 outside a cascade
  std::string teacher;  // teacher identifier for distillation steps
  std::vector<std::string> history;  // every step applied so far, oldest first
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Binary checkpoint file.
///
/// Layout, little-endian throughout:
///   "CKDCKPT\0"  u32 version  u64 header_len  header (JSON: config, provenance)
///   u32 n_tensors, then per tensor:
///     u32 name_len  name  u32 rank  u64 dims[rank]  u8 dtype(1 = f64)  u64 offset
///   payload: raw tensor data, offsets relative to the payload start.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  Provenance provenance;
  std::vector<ad::Parameter> tensors;

  static Checkpoint of(const TinyVlm& model, Provenance provenance);
  TinyVlm restore() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

}  // namespace ckd::model
