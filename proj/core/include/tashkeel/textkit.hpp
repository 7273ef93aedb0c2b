#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tashkeel/result.hpp"

namespace tashkeel::textkit {

// Combining marks handled by the label space.
inline constexpr char32_t kFathatain = 0x064B;
inline constexpr char32_t kDammatain = 0x064C;
inline constexpr char32_t kKasratain = 0x064D;
inline constexpr char32_t kFatha = 0x064E;
inline constexpr char32_t kDamma = 0x064F;
inline constexpr char32_t kKasra = 0x0650;
inline constexpr char32_t kShadda = 0x0651;
inline constexpr char32_t kSukun = 0x0652;
inline constexpr char32_t kTatweel = 0x0640;

/// The 15 valid diacritic combinations: the three short vowels each in
/// plain/tanwin/shadda/shadda+tanwin form, sukun, plain shadda, and the
/// bare letter. Ids are stable — they appear in checkpoints, vote tables
/// and exported JSON.
enum class DiacriticClass : uint8_t {
  None = 0,
  Fatha = 1,
  Fathatain = 2,
  Kasra = 3,
  Kasratain = 4,
  Damma = 5,
  Dammatain = 6,
  Sukun = 7,
  Shadda = 8,
  ShaddaFatha = 9,
  ShaddaFathatain = 10,
  ShaddaKasra = 11,
  ShaddaKasratain = 12,
  ShaddaDamma = 13,
  ShaddaDammatain = 14,
};

inline constexpr int kNumClasses = 15;

const char* class_name(DiacriticClass c);

/// Combining codepoints of a class in canonical emission order
/// (shadda first, then the vowel mark).
const std::u32string& class_marks(DiacriticClass c);

bool is_diacritic_mark(char32_t cp);

/// Letters that may carry diacritics. Tatweel and the Quranic annotation
/// range are deliberately not letters here.
bool is_arabic_letter(char32_t cp);

enum class CharKind : uint8_t { ArabicLetter, Other };

struct CharToken {
  char32_t base;
  CharKind kind;
  DiacriticClass gold;
};

/// A parsed line: every non-mark codepoint in order (whitespace and
/// punctuation included as kind=Other), plus [begin,end) char ranges of
/// the whitespace-delimited words.
struct AnnotatedSentence {
  std::vector<CharToken> chars;
  std::vector<std::pair<int, int>> words;
  std::string raw;

  std::u32string base_codepoints() const;
  std::vector<DiacriticClass> classes() const;
  /// Word text with marks removed, e.g. for vocabulary keys.
  std::string word_text(int w) const;
};

/// Maps a set of marks on one letter into the class space, accepting
/// either mark order. Anything outside the 15 combinations is an error.
Result<DiacriticClass> class_of_marks(const std::vector<char32_t>& marks);

/// Splits text into base codepoints and per-character classes.
/// Marks with no preceding Arabic letter are OrphanMark errors; mark sets
/// outside the class space are InvalidMarkCombination errors.
Result<AnnotatedSentence> parse_diacritics(std::string_view text);

/// Re-attaches class marks after each base codepoint. Inverse of parsing:
/// parse_diacritics(apply_diacritics(b, c)) yields (b, c) back.
Result<std::string> apply_diacritics(std::u32string_view base,
                                     const std::vector<DiacriticClass>& classes);

/// apply_diacritics over a sentence's own layout, with replacement classes.
Result<std::string> reconstruct(const AnnotatedSentence& s,
                                const std::vector<DiacriticClass>& classes);

/// The documented class-id table (classes.json).
std::string classes_json();

/// FNV-1a hash of the class table; stored in checkpoints so readers can
/// detect id-space drift.
uint64_t classes_hash();

}  // namespace tashkeel::textkit
