#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tashkeel/corpus.hpp"
#include "tashkeel/model.hpp"

namespace tashkeel::checkpoint {

nlohmann::json to_json(const model::D2Config& c);
nlohmann::json to_json(const model::D3Config& c);
nlohmann::json to_json(const model::FlatConfig& c);
model::D2Config d2_config_from_json(const nlohmann::json& j);
model::D3Config d3_config_from_json(const nlohmann::json& j);
model::FlatConfig flat_config_from_json(const nlohmann::json& j);

/// On-disk layout: "TKCP" magic, u32 version, u64 header length, header
/// JSON, then float32 little-endian blobs in header order. The header
/// carries model kind, config, vocabulary, class-table/vocab hashes,
/// epoch and metrics, plus a name -> (offset, shape) index into the
/// blob section.
struct Loaded {
  nlohmann::json header;
  corpus::Vocabulary vocab;
  std::vector<std::pair<std::string, std::pair<numerics::Shape, std::vector<float>>>> tensors;

  const std::vector<float>* tensor(const std::string& name) const {
    for (const auto& [n, sv] : tensors)
      if (n == name) return &sv.second;
    return nullptr;
  }
  std::string model_kind() const { return header.at("model").get<std::string>(); }
};

template <typename T>
void save(const std::string& path, const std::string& model_kind, const nlohmann::json& config,
          const corpus::Vocabulary& vocab, const numerics::ParamSet<T>& params, int epoch,
          const nlohmann::json& metrics);

Loaded load(const std::string& path);

/// Copies blob data into an existing parameter set (shape-checked).
template <typename T>
void restore_params(const Loaded& ckpt, numerics::ParamSet<T>& params);

/// Rebuilds a ready-to-run model from a checkpoint.
template <typename T>
model::D2Model<T> load_d2(const Loaded& ckpt);
template <typename T>
model::D3Model<T> load_d3(const Loaded& ckpt);
template <typename T>
model::FlatModel<T> load_flat(const Loaded& ckpt);

uint64_t file_hash(const std::string& path);

}  // namespace tashkeel::checkpoint
