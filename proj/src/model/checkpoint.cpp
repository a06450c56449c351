#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "ckd/model/model.hpp"
#include "ckd/util/error.hpp"

namespace ckd::model {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

using json = nlohmann::json;
constexpr char kMagic[8] = {'C', 'K', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint8_t kDtypeF64 = 1;

json config_json(const ModelConfig& c) {
  return json{{"d_embed", c.d_embed},   {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq},
              {"n_visual", c.n_visual}, {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
              {"d_hidden", c.d_hidden}, {"d_vision", c.d_vision},     {"patch_dim", c.patch_dim},
              {"tier", tier_name(c.tier)}, {"seed", c.seed}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.d_embed = j.at("d_embed").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq = j.at("max_seq").get<std::size_t>();
  c.n_visual = j.at("n_visual").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_hidden = j.at("d_hidden").get<std::size_t>();
  c.d_vision = j.at("d_vision").get<std::size_t>();
  c.patch_dim = j.at("patch_dim").get<std::size_t>();
  c.tier = tier_from_name(j.at("tier").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) throw Error("checkpoint truncated");
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint Checkpoint::of(const TinyVlm& model, Provenance provenance) {
  Checkpoint c{model.config(), std::move(provenance), {}};
  for (const ad::Parameter& p : model.params()) c.tensors.push_back({p.name, p.value, {}, true});
  return c;
}

TinyVlm Checkpoint::restore() const {
  TinyVlm m(config);
  if (m.params().size() != tensors.size()) {
    throw Error("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                std::to_string(m.params().size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    ad::Parameter& p = m.params()[i];
    if (p.name != tensors[i].name || !(p.value.shape() == tensors[i].value.shape())) {
      throw Error("checkpoint tensor " + tensors[i].name + " " + tensors[i].value.shape().str() +
                  " does not match model tensor " + p.name + " " + p.value.shape().str());
    }
    p.value = tensors[i].value;
  }
  return m;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  const json header{{"config", config_json(ckpt.config)},
                    {"provenance",
                     {{"step", ckpt.provenance.step},
                      {"stage", ckpt.provenance.stage},
                      {"teacher", ckpt.provenance.teacher},
                      {"history", ckpt.provenance.history}}}};
  const std::string h = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, h.size());
  out.insert(out.end(), h.begin(), h.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  for (const ad::Parameter& t : ckpt.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    const auto& dims = t.value.shape().dims();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) put<std::uint64_t>(out, d);
    put<std::uint8_t>(out, kDtypeF64);
    put<std::uint64_t>(out, offset);
    offset += t.value.size() * sizeof(double);
  }
  for (const ad::Parameter& t : ckpt.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.value.ptr());
    out.insert(out.end(), p, p + t.value.size() * sizeof(double));
  }
  return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(8) != std::string(kMagic, 8)) throw Error("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto hlen = r.get<std::uint64_t>();
  Checkpoint c;
  try {
    const json header = json::parse(r.str(hlen));
    c.config = config_from(header.at("config"));
    const json& pv = header.at("provenance");
    c.provenance.step = pv.at("step").get<std::string>();
    c.provenance.stage = pv.at("stage").get<int>();
    c.provenance.teacher = pv.at("teacher").get<std::string>();
    c.provenance.history = pv.at("history").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint header: ") + e.what());
  }
  struct Entry {
    std::string name;
    std::vector<std::size_t> dims;
    std::uint64_t offset;
  };
  std::vector<Entry> table(r.get<std::uint32_t>());
  for (Entry& e : table) {
    e.name = r.str(r.get<std::uint32_t>());
    e.dims.resize(r.get<std::uint32_t>());
    for (std::size_t& d : e.dims) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (r.get<std::uint8_t>() != kDtypeF64) throw Error("checkpoint tensor " + e.name + ": dtype");
    e.offset = r.get<std::uint64_t>();
  }
  const std::size_t payload = r.pos();
  for (Entry& e : table) {
    Tensor t{Shape(e.dims)};
    const std::size_t n = t.size() * sizeof(double);
    if (e.offset > bytes.size() - payload || n > bytes.size() - payload - e.offset) {
      throw Error("checkpoint tensor " + e.name + " runs past the end of the file");
    }
    std::memcpy(t.ptr(), bytes.data() + payload + e.offset, n);
    c.tensors.push_back({std::move(e.name), std::move(t), {}, true});
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize(ckpt);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace ckd::model
