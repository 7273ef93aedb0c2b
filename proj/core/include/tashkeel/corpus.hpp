#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tashkeel/result.hpp"
#include "tashkeel/textkit.hpp"

namespace tashkeel::corpus {

/// Word and character id maps. Ids are dense and deterministic for a
/// given corpus: sorted by descending frequency, ties by codepoint order.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kDrop = 2;  // reserved; see module notes
  static constexpr int kWordReserved = 3;
  static constexpr int kCharReserved = 2;

  std::vector<std::string> words;   // index = id; reserved slots included
  std::vector<char32_t> chars;      // index = id; chars[0]/chars[1] are sentinels

  std::map<std::string, int> word_ids;
  std::map<char32_t, int> char_ids;

  int word_id(const std::string& w) const {
    auto it = word_ids.find(w);
    return it == word_ids.end() ? kUnk : it->second;
  }
  int char_id(char32_t c) const {
    auto it = char_ids.find(c);
    return it == char_ids.end() ? kUnk : it->second;
  }
  int word_count() const { return static_cast<int>(words.size()); }
  int char_count() const { return static_cast<int>(chars.size()); }

  std::string to_json() const;
  static Result<Vocabulary> from_json(const std::string& json_text);
  uint64_t hash() const;
};

/// A word unit fed to the model: a word, or a Tw-sized chunk of an
/// overlong word. Indices address AnnotatedSentence::chars.
struct Unit {
  int word;        // owning word index in the sentence
  int char_begin;  // [char_begin, char_end) in sentence chars
  int char_end;
  int length() const { return char_end - char_begin; }
};

/// One Ts-window of units with ids, labels and masks, ready to stack
/// into a batch. `char_pos` maps each slot back to the sentence character
/// it came from (-1 for padding), which is what voting aggregates over.
struct Segment {
  int Ts = 0;
  int Tw = 0;
  int sentence = 0;    // sentence id (line index)
  int start_unit = 0;  // first unit index of the window

  std::vector<int> word_ids;             // Ts
  std::vector<uint8_t> word_mask;        // Ts
  std::vector<int> char_ids;             // Ts*Tw, row-major
  std::vector<int> labels;               // Ts*Tw, class ids (None on padding)
  std::vector<uint8_t> char_mask;        // Ts*Tw
  std::vector<int> char_pos;             // Ts*Tw, sentence char index or -1
  std::vector<int> unit_len;             // Ts, 0 for padded slots

  int real_units() const {
    int n = 0;
    for (auto m : word_mask) n += m;
    return n;
  }
};

struct LoadStats {
  int loaded = 0;
  int skipped = 0;
  std::vector<std::pair<int, std::string>> skip_reasons;  // (line index, reason)
};

/// Reads one sentence per line. Lines that fail diacritic parsing are
/// counted and skipped rather than failing the load.
Result<std::vector<textkit::AnnotatedSentence>> load_corpus(const std::string& path,
                                                            LoadStats* stats = nullptr);

/// Splits a sentence's words into model units, chunking words longer
/// than Tw so no character loses its label.
std::vector<Unit> make_units(const textkit::AnnotatedSentence& s, int Tw);

/// Overlapping Ts-windows over the sentence's units: starts at
/// 0, stride, 2*stride, ... until a window reaches the end; the last
/// window is padded when the tail is short.
std::vector<Segment> segment_sentence(const textkit::AnnotatedSentence& s, int sentence_id,
                                      const Vocabulary& vocab, int Ts, int stride, int Tw);

Result<Vocabulary> build_vocab(const std::vector<textkit::AnnotatedSentence>& sentences,
                               int min_count, int Tw);

/// Plain-text embedding file: one `word v1 v2 ... vd` line each.
/// Returns word -> vector; every vector must have the same width.
Result<std::map<std::string, std::vector<float>>> load_word_vectors(const std::string& path);

}  // namespace tashkeel::corpus
