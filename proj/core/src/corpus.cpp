#include "tashkeel/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tashkeel/utf8.hpp"

namespace tashkeel::corpus {

using textkit::AnnotatedSentence;
using textkit::CharKind;
using textkit::DiacriticClass;

std::string Vocabulary::to_json() const {
  nlohmann::json j;
  j["words"] = words;
  std::vector<uint32_t> cps(chars.begin(), chars.end());
  j["chars"] = cps;
  return j.dump();
}

Result<Vocabulary> Vocabulary::from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.contains("words") || !j.contains("chars")) {
    return Error{ErrorKind::ParseError, "malformed vocabulary json"};
  }
  Vocabulary v;
  v.words = j["words"].get<std::vector<std::string>>();
  for (uint32_t cp : j["chars"].get<std::vector<uint32_t>>()) v.chars.push_back(cp);
  for (size_t i = kWordReserved; i < v.words.size(); ++i) v.word_ids[v.words[i]] = static_cast<int>(i);
  for (size_t i = kCharReserved; i < v.chars.size(); ++i) v.char_ids[v.chars[i]] = static_cast<int>(i);
  return v;
}

uint64_t Vocabulary::hash() const {
  std::string bytes = to_json();
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

Result<std::vector<AnnotatedSentence>> load_corpus(const std::string& path, LoadStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return Error{ErrorKind::IoError, "cannot open " + path};

  std::vector<AnnotatedSentence> out;
  LoadStats local;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      ++line_no;
      continue;
    }
    auto parsed = textkit::parse_diacritics(line);
    if (parsed.ok()) {
      out.push_back(std::move(parsed).value());
      ++local.loaded;
    } else {
      ++local.skipped;
      local.skip_reasons.emplace_back(line_no, parsed.error().to_string());
    }
    ++line_no;
  }
  if (stats) *stats = local;
  if (out.empty() && local.skipped == 0) return Error{ErrorKind::EmptyCorpus, path + " has no sentences"};
  if (out.empty()) return Error{ErrorKind::EmptyCorpus, path + ": every line failed to parse"};
  return out;
}

std::vector<Unit> make_units(const AnnotatedSentence& s, int Tw) {
  std::vector<Unit> units;
  for (size_t w = 0; w < s.words.size(); ++w) {
    auto [b, e] = s.words[w];
    for (int begin = b; begin < e; begin += Tw) {
      Unit u;
      u.word = static_cast<int>(w);
      u.char_begin = begin;
      u.char_end = std::min(begin + Tw, e);
      units.push_back(u);
    }
  }
  return units;
}

namespace {

std::string unit_text(const AnnotatedSentence& s, const Unit& u) {
  std::u32string cps;
  for (int i = u.char_begin; i < u.char_end; ++i) cps.push_back(s.chars[static_cast<size_t>(i)].base);
  return utf8::encode(cps);
}

}  // namespace

std::vector<Segment> segment_sentence(const AnnotatedSentence& s, int sentence_id,
                                      const Vocabulary& vocab, int Ts, int stride, int Tw) {
  if (Ts < 1 || stride < 1 || stride > Ts) {
    throw ConfigError("segment_sentence requires Ts >= 1 and 1 <= stride <= Ts");
  }
  std::vector<Unit> units = make_units(s, Tw);
  int n = static_cast<int>(units.size());

  std::vector<int> starts;
  starts.push_back(0);
  while (starts.back() + Ts < n) starts.push_back(starts.back() + stride);

  std::vector<Segment> out;
  for (int start : starts) {
    Segment seg;
    seg.Ts = Ts;
    seg.Tw = Tw;
    seg.sentence = sentence_id;
    seg.start_unit = start;
    seg.word_ids.assign(static_cast<size_t>(Ts), Vocabulary::kPad);
    seg.word_mask.assign(static_cast<size_t>(Ts), 0);
    seg.char_ids.assign(static_cast<size_t>(Ts * Tw), Vocabulary::kPad);
    seg.labels.assign(static_cast<size_t>(Ts * Tw), static_cast<int>(DiacriticClass::None));
    seg.char_mask.assign(static_cast<size_t>(Ts * Tw), 0);
    seg.char_pos.assign(static_cast<size_t>(Ts * Tw), -1);
    seg.unit_len.assign(static_cast<size_t>(Ts), 0);

    for (int i = 0; i < Ts && start + i < n; ++i) {
      const Unit& u = units[static_cast<size_t>(start + i)];
      int len = u.length();
      if (len > Tw) throw ShapeError("unit longer than Tw; ingestion should have chunked it");
      seg.word_ids[static_cast<size_t>(i)] = vocab.word_id(unit_text(s, u));
      seg.word_mask[static_cast<size_t>(i)] = 1;
      seg.unit_len[static_cast<size_t>(i)] = len;
      for (int j = 0; j < len; ++j) {
        const auto& tok = s.chars[static_cast<size_t>(u.char_begin + j)];
        size_t slot = static_cast<size_t>(i * Tw + j);
        seg.char_ids[slot] = vocab.char_id(tok.base);
        seg.labels[slot] = static_cast<int>(tok.gold);
        seg.char_mask[slot] = 1;
        seg.char_pos[slot] = u.char_begin + j;
      }
    }
    out.push_back(std::move(seg));
  }
  return out;
}

Result<Vocabulary> build_vocab(const std::vector<AnnotatedSentence>& sentences, int min_count,
                               int Tw) {
  if (sentences.empty()) return Error{ErrorKind::EmptyCorpus, "build_vocab on empty sentence list"};

  std::map<std::string, int64_t> word_freq;
  std::map<char32_t, int64_t> char_freq;
  for (const auto& s : sentences) {
    for (const Unit& u : make_units(s, Tw)) {
      word_freq[unit_text(s, u)] += 1;
      for (int i = u.char_begin; i < u.char_end; ++i) {
        char_freq[s.chars[static_cast<size_t>(i)].base] += 1;
      }
    }
  }

  Vocabulary v;
  v.words = {"<pad>", "<unk>", "<drop>"};
  v.chars = {0, 0};  // pad, unk sentinels; never printed

  std::vector<std::pair<std::string, int64_t>> ws(word_freq.begin(), word_freq.end());
  std::sort(ws.begin(), ws.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [word, freq] : ws) {
    if (freq < min_count) continue;
    v.word_ids[word] = static_cast<int>(v.words.size());
    v.words.push_back(word);
  }

  std::vector<std::pair<char32_t, int64_t>> cs(char_freq.begin(), char_freq.end());
  std::sort(cs.begin(), cs.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [cp, freq] : cs) {
    v.char_ids[cp] = static_cast<int>(v.chars.size());
    v.chars.push_back(cp);
  }
  return v;
}

Result<std::map<std::string, std::vector<float>>> load_word_vectors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return Error{ErrorKind::IoError, "cannot open " + path};
  std::map<std::string, std::vector<float>> out;
  std::string line;
  size_t dim = 0;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    std::vector<float> vec;
    float x;
    while (ss >> x) vec.push_back(x);
    if (vec.empty()) {
      return Error{ErrorKind::ParseError, path + ":" + std::to_string(line_no) + ": no values"};
    }
    if (dim == 0) dim = vec.size();
    if (vec.size() != dim) {
      return Error{ErrorKind::ParseError,
                   path + ":" + std::to_string(line_no) + ": inconsistent vector width"};
    }
    out[word] = std::move(vec);
  }
  if (out.empty()) return Error{ErrorKind::EmptyCorpus, path + " has no vectors"};
  return out;
}

}  // namespace tashkeel::corpus
