#include "ckd/model/model.hpp"

#include <cmath>

#include "ckd/autodiff/ops.hpp"
#include "ckd/util/error.hpp"
#include "ckd/util/rng.hpp"

namespace ckd::model {

namespace {

constexpr const char* kTierNames[] = {"student", "assistant", "teacher"};

}  // namespace

const char* tier_name(Tier t) { return kTierNames[static_cast<int>(t)]; }

Tier tier_from_name(const std::string& name) {
  for (int t = 0; t < 3; ++t) {
    if (name == kTierNames[t]) return static_cast<Tier>(t);
  }
  throw ConfigError("tier", "unknown tier '" + name + "' (student, assistant, teacher)");
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("model.vocab_size", "must be at least 2");
  if (n_visual >= max_seq) throw ConfigError("model.n_visual", "m must be smaller than max_seq k");
  if (d_embed == 0 || d_hidden == 0 || d_vision == 0 || patch_dim == 0) {
    throw ConfigError("model", "widths must be positive");
  }
  if (n_layers == 0) throw ConfigError("model.n_layers", "must be positive");
  if (n_heads == 0 || d_hidden % n_heads != 0) {
    throw ConfigError("model.n_heads", "must divide d_hidden");
  }
}

ModelConfig tier_config(Tier tier, std::size_t vocab_size, std::size_t max_seq,
                        std::size_t n_visual, std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.max_seq = max_seq;
  c.n_visual = n_visual;
  c.tier = tier;
  c.seed = seed;
  const std::size_t f = std::size_t{1} << static_cast<int>(tier);
  c.n_layers = f;
  c.d_hidden = 16 * f;
  c.n_heads = 2 * f;
  c.validate();
  return c;
}

std::string Parts::str() const {
  std::string s;
  auto add = [&](Part p, const char* n) {
    if (!has(p)) return;
    if (!s.empty()) s += '+';
    s += n;
  };
  add(Part::encoder, "encoder");
  add(Part::connector, "connector");
  add(Part::backbone, "backbone");
  add(Part::head, "head");
  return s.empty() ? "none" : s;
}

TinyVlm::TinyVlm(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const ModelConfig& c = config_;
  auto add = [&](Part part, std::string name, Shape shape, double sd, double fill = 0.0) {
    Tensor t(shape, fill);
    if (sd > 0.0) {
      Rng rng(derive_seed(c.seed, name));
      for (double& v : t.data()) v = rng.normal(0.0, sd);
    }
    params_.push_back(ad::Parameter{std::move(name), std::move(t), {}, true});
    parts_.push_back(part);
  };
  auto linear = [&](Part part, const std::string& name, std::size_t in, std::size_t out,
                    double gain = 1.0) {
    add(part, name + ".w", Shape{in, out}, gain / std::sqrt(static_cast<double>(in)));
    add(part, name + ".b", Shape{out}, 0.0);
  };
  const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(c.n_layers));

  linear(Part::encoder, "encoder.fc1", c.patch_dim, c.d_vision);
  linear(Part::encoder, "encoder.fc2", c.d_vision, c.d_vision);
  linear(Part::connector, "connector.fc1", c.d_vision, c.d_embed);
  linear(Part::connector, "connector.fc2", c.d_embed, c.d_embed);
  add(Part::backbone, "backbone.tok_embed", Shape{c.vocab_size, c.d_embed}, 1.0);
  linear(Part::backbone, "backbone.in_proj", c.d_embed, c.d_hidden);
  add(Part::backbone, "backbone.pos_embed", Shape{c.max_seq, c.d_hidden}, 0.1);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string b = "backbone.l" + std::to_string(l);
    add(Part::backbone, b + ".ln1.g", Shape{c.d_hidden}, 0.0, 1.0);
    add(Part::backbone, b + ".ln1.b", Shape{c.d_hidden}, 0.0);
    linear(Part::backbone, b + ".attn.qkv", c.d_hidden, 3 * c.d_hidden);
    linear(Part::backbone, b + ".attn.out", c.d_hidden, c.d_hidden, resid);
    add(Part::backbone, b + ".ln2.g", Shape{c.d_hidden}, 0.0, 1.0);
    add(Part::backbone, b + ".ln2.b", Shape{c.d_hidden}, 0.0);
    linear(Part::backbone, b + ".ffn.fc1", c.d_hidden, 4 * c.d_hidden);
    linear(Part::backbone, b + ".ffn.fc2", 4 * c.d_hidden, c.d_hidden, resid);
  }
  add(Part::backbone, "backbone.ln_f.g", Shape{c.d_hidden}, 0.0, 1.0);
  add(Part::backbone, "backbone.ln_f.b", Shape{c.d_hidden}, 0.0);
  linear(Part::head, "head", c.d_hidden, c.vocab_size);
}

ad::Parameter& TinyVlm::param(const std::string& name) {
  for (ad::Parameter& q : params_) {
    if (q.name == name) return q;
  }
  throw Error("no parameter named '" + name + "'");
}

const ad::Parameter& TinyVlm::param(const std::string& name) const {
  return const_cast<TinyVlm*>(this)->param(name);
}

Part TinyVlm::part_of(const ad::Parameter& q) const {
  return parts_[static_cast<std::size_t>(&q - params_.data())];
}

std::size_t TinyVlm::parameter_count() const {
  std::size_t n = 0;
  for (const ad::Parameter& q : params_) n += q.value.size();
  return n;
}

std::size_t TinyVlm::parameter_count(Parts parts) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (parts.has(parts_[i])) n += params_[i].value.size();
  }
  return n;
}

void TinyVlm::set_trainable(Parts parts) {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].trainable = parts.has(parts_[i]);
}

Parts TinyVlm::trainable_parts() const {
  Parts out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].trainable) out = out | parts_[i];
  }
  return out;
}

void TinyVlm::zero_grad() {
  for (ad::Parameter& q : params_) q.zero_grad();
}

void TinyVlm::load_part(const TinyVlm& from, Part part) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (parts_[i] != part) continue;
    const ad::Parameter& src = from.param(params_[i].name);
    if (!(src.value.shape() == params_[i].value.shape())) {
      throw ShapeError("load_part: " + src.name + " is " + src.value.shape().str() +
                       ", expected " + params_[i].value.shape().str());
    }
    params_[i].value = src.value;
  }
}

namespace {

// Tape handle for a parameter; the tape only reads it.
ad::Var pv(ad::Tape& tape, const ad::Parameter& q) {
  return tape.param(const_cast<ad::Parameter&>(q));
}

ad::Var dense(ad::Tape& tape, ad::Var x, const ad::Parameter& w, const ad::Parameter& b) {
  return ad::add_bias(ad::matmul(x, pv(tape, w)), pv(tape, b));
}

void check_batch(const ModelConfig& c, const data::TokenBatch& b) {
  if (b.seq_len > c.max_seq) {
    throw ShapeError("forward: sequence length " + std::to_string(b.seq_len) +
                     " exceeds max_seq " + std::to_string(c.max_seq));
  }
  if (b.n_visual != c.n_visual) {
    throw ShapeError("forward: batch has " + std::to_string(b.n_visual) +
                     " visual tokens, model expects " + std::to_string(c.n_visual));
  }
  if (b.n_seq == 0 || b.tokens.size() != b.n_seq * b.seq_len ||
      b.patches.size() != b.n_seq * b.n_visual * c.patch_dim) {
    throw ShapeError("forward: malformed batch");
  }
  for (std::int32_t t : b.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
      throw ShapeError("forward: token " + std::to_string(t) + " outside vocabulary");
    }
  }
}

}  // namespace

ad::Var encode_patches(ad::Tape& tape, const TinyVlm& model, const data::TokenBatch& batch) {
  const ModelConfig& c = model.config();
  const std::size_t rows = batch.n_seq * batch.n_visual;
  ad::Var px = tape.constant(Tensor(Shape{rows, c.patch_dim}, batch.patches));
  ad::Var h = ad::gelu(dense(tape, px, model.param("encoder.fc1.w"), model.param("encoder.fc1.b")));
  return dense(tape, h, model.param("encoder.fc2.w"), model.param("encoder.fc2.b"));
}

ad::Var TinyVlm::forward(ad::Tape& tape, const data::TokenBatch& batch) const {
  const ModelConfig& c = config_;
  check_batch(c, batch);
  const std::size_t n = batch.n_seq, T = batch.seq_len, m = batch.n_visual;

  // Parameter order follows construction in the constructor above.
  std::size_t k = 0;
  auto next = [&]() -> const ad::Parameter& { return params_[k++]; };
  const ad::Parameter& e1w = next(); const ad::Parameter& e1b = next();
  const ad::Parameter& e2w = next(); const ad::Parameter& e2b = next();
  const ad::Parameter& c1w = next(); const ad::Parameter& c1b = next();
  const ad::Parameter& c2w = next(); const ad::Parameter& c2b = next();
  const ad::Parameter& tok = next();
  const ad::Parameter& inw = next(); const ad::Parameter& inb = next();
  const ad::Parameter& pos = next();

  std::vector<std::uint32_t> ids(batch.tokens.begin(), batch.tokens.end());
  ad::Var x = ad::select_rows(pv(tape, tok), ids);
  if (m > 0) {
    ad::Var px = tape.constant(Tensor(Shape{n * m, c.patch_dim}, batch.patches));
    ad::Var vis = dense(tape, ad::gelu(dense(tape, px, e1w, e1b)), e2w, e2b);
    vis = dense(tape, ad::gelu(dense(tape, vis, c1w, c1b)), c2w, c2b);
    // Visual rows come first in the concatenation, token rows after them.
    std::vector<std::uint32_t> pick(n * T);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t i = 0; i < T; ++i) {
        pick[s * T + i] = static_cast<std::uint32_t>(i < m ? s * m + i : n * m + s * T + i);
      }
    }
    x = ad::select_rows(ad::concat_rows(vis, x), pick);
  }
  std::vector<std::uint32_t> positions(n * T);
  for (std::size_t r = 0; r < n * T; ++r) positions[r] = static_cast<std::uint32_t>(r % T);
  ad::Var h = ad::add(dense(tape, x, inw, inb), ad::select_rows(pv(tape, pos), positions));

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const ad::Parameter& g1 = next(); const ad::Parameter& b1 = next();
    const ad::Parameter& qw = next(); const ad::Parameter& qb = next();
    const ad::Parameter& ow = next(); const ad::Parameter& ob = next();
    const ad::Parameter& g2 = next(); const ad::Parameter& b2 = next();
    const ad::Parameter& f1w = next(); const ad::Parameter& f1b = next();
    const ad::Parameter& f2w = next(); const ad::Parameter& f2b = next();
    ad::Var a = ad::layer_norm(h, pv(tape, g1), pv(tape, b1));
    ad::Var att = ad::causal_attention(dense(tape, a, qw, qb), n, T, c.n_heads);
    h = ad::add(h, dense(tape, att, ow, ob));
    ad::Var f = ad::layer_norm(h, pv(tape, g2), pv(tape, b2));
    h = ad::add(h, dense(tape, ad::gelu(dense(tape, f, f1w, f1b)), f2w, f2b));
  }
  const ad::Parameter& gf = next(); const ad::Parameter& bf = next();
  const ad::Parameter& hw = next(); const ad::Parameter& hb = next();
  h = ad::layer_norm(h, pv(tape, gf), pv(tape, bf));
  return dense(tape, h, hw, hb);
}

losses::LogitBundle TinyVlm::forward(const data::TokenBatch& batch) const {
  ad::Tape tape;
  tape.set_grad_enabled(false);
  Tensor logits = forward(tape, batch).value();
  return make_bundle(batch, std::move(logits));
}

TinyVlm build_model(const ModelConfig& config) { return TinyVlm(config); }

losses::LogitBundle make_bundle(const data::TokenBatch& batch, Tensor logits) {
  losses::LogitBundle b;
  b.logits = std::move(logits);
  b.n_seq = batch.n_seq;
  b.seq_len = batch.seq_len;
  b.n_visual = batch.n_visual;
  b.relevance = batch.relevance;
  b.targets = batch.tokens;
  return b;
}

}  // namespace ckd::model
