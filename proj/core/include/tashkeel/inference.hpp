#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tashkeel/checkpoint.hpp"
#include "tashkeel/model.hpp"

namespace tashkeel::inference {

enum class HintMode { RawOutput, MaskedOutput };

/// Known diacritics supplied with the input: sentence char position ->
/// class. In RawOutput mode hints steer the decoder but the emitted
/// labels are the model's own; in MaskedOutput mode hinted positions
/// are emitted as the hints.
struct HintSet {
  HintMode mode = HintMode::RawOutput;
  std::map<int, textkit::DiacriticClass> by_char;
  bool empty() const { return by_char.empty(); }
};

enum class TiePolicy { LowestId, SeededRandom };

/// Per-character ballot over the segment predictions that cover it.
struct VoteTable {
  struct Row {
    int position = 0;  // sentence char index
    std::array<int, textkit::kNumClasses> counts{};
    int total() const {
      int t = 0;
      for (int c : counts) t += c;
      return t;
    }
  };
  std::vector<Row> rows;
  nlohmann::json to_json() const;
};

/// Majority per row; ties go to the lowest class id or to a seeded
/// uniform draw among the tied classes.
Result<std::vector<textkit::DiacriticClass>> vote(const VoteTable& table, TiePolicy policy,
                                                  uint64_t seed = 0, uint64_t stream_tag = 0);

struct DiacritizeOptions {
  int Ts = 20;
  int stride = 2;
  HintSet hints;
  TiePolicy tie = TiePolicy::LowestId;
  uint64_t seed = 0;
  uint64_t line_index = 0;  // addresses the tie-break stream
  int threads = 1;
  bool collect_attention = false;
};

struct DiacritizeResult {
  std::string text;
  std::vector<textkit::DiacriticClass> classes;  // per sentence char
  VoteTable votes;
  nlohmann::json attention;  // filled when collect_attention is set
};

/// A loaded checkpoint ready to run, hiding model kind and precision.
class Diacritizer {
 public:
  static Diacritizer load(const std::string& path, int precision = 32);

  const std::string& kind() const { return kind_; }
  bool accepts_hints() const { return kind_ == "d3"; }
  int Tw() const;
  const corpus::Vocabulary& vocab() const { return vocab_; }
  uint64_t checkpoint_hash() const { return file_hash_; }

  Result<DiacritizeResult> diacritize(const std::string& line, const DiacritizeOptions& opts) const;

  /// Runs the model over one line and writes the per-character word
  /// attention weights as JSON.
  Result<nlohmann::json> export_attention(const std::string& line, int Ts = 20,
                                          int stride = 2) const;

 private:
  using ModelVariant =
      std::variant<std::monostate, model::D2Model<float>, model::D2Model<double>,
                   model::D3Model<float>, model::D3Model<double>, model::FlatModel<float>,
                   model::FlatModel<double>>;
  std::shared_ptr<ModelVariant> model_;
  std::string kind_;
  corpus::Vocabulary vocab_;
  uint64_t file_hash_ = 0;
};

/// Parses a hints file: JSON array of {"line": int, "pos": int,
/// "class": id or name}, grouped per line index.
Result<std::map<uint64_t, HintSet>> load_hints(const std::string& path, HintMode mode);

}  // namespace tashkeel::inference
