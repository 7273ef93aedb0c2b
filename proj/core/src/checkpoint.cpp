#include "tashkeel/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts are unsupported");

namespace tashkeel::checkpoint {

using nlohmann::json;

json to_json(const model::D2Config& c) {
  return json{{"char_emb", c.char_emb},
              {"word_emb", c.word_emb},
              {"word_hidden", c.word_hidden},
              {"word_layers", c.word_layers},
              {"char_hidden", c.char_hidden},
              {"char_layers", c.char_layers},
              {"use_attention", c.use_attention},
              {"attn_dk", c.attn_dk},
              {"attn_dv", c.attn_dv},
              {"attn_out", c.attn_out},
              {"classes", c.classes},
              {"Ts", c.Ts},
              {"Tw", c.Tw},
              {"word_vocab", c.word_vocab},
              {"char_vocab", c.char_vocab},
              {"freeze_word_emb", c.freeze_word_emb}};
}

json to_json(const model::D3Config& c) {
  json j = to_json(c.d2);
  j["decoder_hidden"] = c.decoder_hidden;
  return j;
}

json to_json(const model::FlatConfig& c) {
  return json{{"char_emb", c.char_emb}, {"hidden", c.hidden},   {"layers", c.layers},
              {"classes", c.classes},   {"Ts", c.Ts},           {"Tw", c.Tw},
              {"char_vocab", c.char_vocab}};
}

model::D2Config d2_config_from_json(const json& j) {
  model::D2Config c;
  c.char_emb = j.at("char_emb");
  c.word_emb = j.at("word_emb");
  c.word_hidden = j.at("word_hidden");
  c.word_layers = j.at("word_layers");
  c.char_hidden = j.at("char_hidden");
  c.char_layers = j.at("char_layers");
  c.use_attention = j.at("use_attention");
  c.attn_dk = j.at("attn_dk");
  c.attn_dv = j.at("attn_dv");
  c.attn_out = j.at("attn_out");
  c.classes = j.at("classes");
  c.Ts = j.at("Ts");
  c.Tw = j.at("Tw");
  c.word_vocab = j.at("word_vocab");
  c.char_vocab = j.at("char_vocab");
  c.freeze_word_emb = j.at("freeze_word_emb");
  return c;
}

model::D3Config d3_config_from_json(const json& j) {
  model::D3Config c;
  c.d2 = d2_config_from_json(j);
  c.decoder_hidden = j.at("decoder_hidden");
  return c;
}

model::FlatConfig flat_config_from_json(const json& j) {
  model::FlatConfig c;
  c.char_emb = j.at("char_emb");
  c.hidden = j.at("hidden");
  c.layers = j.at("layers");
  c.classes = j.at("classes");
  c.Ts = j.at("Ts");
  c.Tw = j.at("Tw");
  c.char_vocab = j.at("char_vocab");
  return c;
}

namespace {

constexpr char kMagic[4] = {'T', 'K', 'C', 'P'};
constexpr uint32_t kVersion = 1;

std::string hex64(uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

template <typename T>
void save(const std::string& path, const std::string& model_kind, const json& config,
          const corpus::Vocabulary& vocab, const numerics::ParamSet<T>& params, int epoch,
          const json& metrics) {
  json header;
  header["model"] = model_kind;
  header["config"] = config;
  header["classes_hash"] = hex64(textkit::classes_hash());
  header["vocab_hash"] = hex64(vocab.hash());
  header["epoch"] = epoch;
  header["metrics"] = metrics;
  header["vocab"] = json::parse(vocab.to_json());

  json index = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : params.items) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t->shape;
    entry["offset"] = offset;
    entry["count"] = t->size();
    index.push_back(entry);
    offset += static_cast<uint64_t>(t->size()) * sizeof(float);
  }
  header["params"] = index;

  std::string head = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(kMagic, 4);
  uint32_t ver = kVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  uint64_t hlen = head.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  std::vector<float> buf;
  for (const auto& [name, t] : params.items) {
    buf.resize(t->data.size());
    for (size_t i = 0; i < t->data.size(); ++i) buf[i] = static_cast<float>(t->data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw IoError("short write to " + path);
}

Loaded load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  uint32_t ver = 0;
  uint64_t hlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError(path + " is not a checkpoint");
  if (ver != kVersion) throw IoError(path + ": unsupported checkpoint version");
  std::string head(hlen, '\0');
  in.read(head.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError(path + ": truncated header");

  Loaded out;
  out.header = json::parse(head);
  auto vocab = corpus::Vocabulary::from_json(out.header.at("vocab").dump());
  if (!vocab.ok()) throw IoError(path + ": bad vocabulary block");
  out.vocab = std::move(vocab).value();

  for (const auto& entry : out.header.at("params")) {
    numerics::Shape shape = entry.at("shape").get<numerics::Shape>();
    uint64_t count = entry.at("count").get<uint64_t>();
    std::vector<float> data(count);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw IoError(path + ": truncated blob for " + entry.at("name").get<std::string>());
    out.tensors.emplace_back(entry.at("name").get<std::string>(),
                             std::make_pair(std::move(shape), std::move(data)));
  }
  return out;
}

template <typename T>
void restore_params(const Loaded& ckpt, numerics::ParamSet<T>& params) {
  for (auto& [name, t] : params.items) {
    const std::vector<float>* src = ckpt.tensor(name);
    if (!src) throw ConfigError("checkpoint missing tensor " + name);
    if (static_cast<int64_t>(src->size()) != t->size()) {
      throw ConfigError("checkpoint tensor " + name + " size mismatch");
    }
    for (size_t i = 0; i < src->size(); ++i) t->data[i] = static_cast<T>((*src)[i]);
  }
}

template <typename T>
model::D2Model<T> load_d2(const Loaded& ckpt) {
  if (ckpt.model_kind() != "d2") throw ConfigError("checkpoint is not a d2 model");
  auto cfg = d2_config_from_json(ckpt.header.at("config"));
  auto m = model::D2Model<T>::init(cfg, 0);
  restore_params(ckpt, m.params);
  return m;
}

template <typename T>
model::D3Model<T> load_d3(const Loaded& ckpt) {
  if (ckpt.model_kind() != "d3") throw ConfigError("checkpoint is not a d3 model");
  auto cfg = d3_config_from_json(ckpt.header.at("config"));
  auto d2 = model::D2Model<T>::init(cfg.d2, 0);
  auto m = model::D3Model<T>::init(cfg, d2, 0);
  restore_params(ckpt, m.params);
  return m;
}

template <typename T>
model::FlatModel<T> load_flat(const Loaded& ckpt) {
  if (ckpt.model_kind() != "flat") throw ConfigError("checkpoint is not a flat model");
  auto cfg = flat_config_from_json(ckpt.header.at("config"));
  auto m = model::FlatModel<T>::init(cfg, 0);
  restore_params(ckpt, m.params);
  return m;
}

uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

template void save<float>(const std::string&, const std::string&, const json&,
                          const corpus::Vocabulary&, const numerics::ParamSet<float>&, int,
                          const json&);
template void save<double>(const std::string&, const std::string&, const json&,
                           const corpus::Vocabulary&, const numerics::ParamSet<double>&, int,
                           const json&);
template void restore_params<float>(const Loaded&, numerics::ParamSet<float>&);
template void restore_params<double>(const Loaded&, numerics::ParamSet<double>&);
template model::D2Model<float> load_d2<float>(const Loaded&);
template model::D2Model<double> load_d2<double>(const Loaded&);
template model::D3Model<float> load_d3<float>(const Loaded&);
template model::D3Model<double> load_d3<double>(const Loaded&);
template model::FlatModel<float> load_flat<float>(const Loaded&);
template model::FlatModel<double> load_flat<double>(const Loaded&);

}  // namespace tashkeel::checkpoint
