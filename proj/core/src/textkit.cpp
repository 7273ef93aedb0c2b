#include "tashkeel/textkit.hpp"

#include <algorithm>
#include <sstream>

#include "tashkeel/utf8.hpp"

namespace tashkeel {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidMarkCombination: return "InvalidMarkCombination";
    case ErrorKind::OrphanMark: return "OrphanMark";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::ClassOnNonLetter: return "ClassOnNonLetter";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::WordTooLong: return "WordTooLong";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::InvalidProbability: return "InvalidProbability";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::HintsOnD2Model: return "HintsOnD2Model";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::AlignmentError: return "AlignmentError";
    case ErrorKind::EmptyTable: return "EmptyTable";
    case ErrorKind::NoArabicLetters: return "NoArabicLetters";
  }
  return "UnknownError";
}

}  // namespace tashkeel

namespace tashkeel::textkit {

namespace {

struct ClassInfo {
  DiacriticClass id;
  const char* name;
  std::u32string marks;  // canonical order, shadda first
};

const std::array<ClassInfo, kNumClasses>& class_table() {
  static const std::array<ClassInfo, kNumClasses> table = {{
      {DiacriticClass::None, "none", U""},
      {DiacriticClass::Fatha, "fatha", {kFatha}},
      {DiacriticClass::Fathatain, "fathatain", {kFathatain}},
      {DiacriticClass::Kasra, "kasra", {kKasra}},
      {DiacriticClass::Kasratain, "kasratain", {kKasratain}},
      {DiacriticClass::Damma, "damma", {kDamma}},
      {DiacriticClass::Dammatain, "dammatain", {kDammatain}},
      {DiacriticClass::Sukun, "sukun", {kSukun}},
      {DiacriticClass::Shadda, "shadda", {kShadda}},
      {DiacriticClass::ShaddaFatha, "shadda_fatha", {kShadda, kFatha}},
      {DiacriticClass::ShaddaFathatain, "shadda_fathatain", {kShadda, kFathatain}},
      {DiacriticClass::ShaddaKasra, "shadda_kasra", {kShadda, kKasra}},
      {DiacriticClass::ShaddaKasratain, "shadda_kasratain", {kShadda, kKasratain}},
      {DiacriticClass::ShaddaDamma, "shadda_damma", {kShadda, kDamma}},
      {DiacriticClass::ShaddaDammatain, "shadda_dammatain", {kShadda, kDammatain}},
  }};
  return table;
}

uint64_t fnv1a(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

const char* class_name(DiacriticClass c) {
  return class_table()[static_cast<size_t>(c)].name;
}

const std::u32string& class_marks(DiacriticClass c) {
  return class_table()[static_cast<size_t>(c)].marks;
}

bool is_diacritic_mark(char32_t cp) {
  return cp >= kFathatain && cp <= kSukun;
}

bool is_arabic_letter(char32_t cp) {
  // U+0621..U+063A (hamza..ghain) and U+0641..U+064A (feh..yeh).
  return (cp >= 0x0621 && cp <= 0x063A) || (cp >= 0x0641 && cp <= 0x064A);
}

std::u32string AnnotatedSentence::base_codepoints() const {
  std::u32string out;
  out.reserve(chars.size());
  for (const auto& t : chars) out.push_back(t.base);
  return out;
}

std::vector<DiacriticClass> AnnotatedSentence::classes() const {
  std::vector<DiacriticClass> out;
  out.reserve(chars.size());
  for (const auto& t : chars) out.push_back(t.gold);
  return out;
}

std::string AnnotatedSentence::word_text(int w) const {
  auto [b, e] = words.at(static_cast<size_t>(w));
  std::u32string cps;
  for (int i = b; i < e; ++i) cps.push_back(chars[static_cast<size_t>(i)].base);
  return utf8::encode(cps);
}

Result<DiacriticClass> class_of_marks(const std::vector<char32_t>& marks) {
  if (marks.empty()) return DiacriticClass::None;
  std::vector<char32_t> sorted = marks;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& info : class_table()) {
    std::vector<char32_t> canon(info.marks.begin(), info.marks.end());
    std::sort(canon.begin(), canon.end());
    if (canon == sorted) return info.id;
  }
  std::string names;
  for (char32_t m : marks) names += utf8::encode(m);
  return Error{ErrorKind::InvalidMarkCombination, "mark set not in the 15-class space: " + names};
}

namespace {

bool is_whitespace(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\r' || cp == U'\n' || cp == 0x00A0;
}

}  // namespace

Result<AnnotatedSentence> parse_diacritics(std::string_view text) {
  AnnotatedSentence out;
  out.raw.assign(text.begin(), text.end());

  std::u32string cps = utf8::decode(text);
  size_t i = 0;
  while (i < cps.size()) {
    char32_t cp = cps[i];
    if (is_diacritic_mark(cp)) {
      return Error{ErrorKind::OrphanMark,
                   "diacritic " + utf8::encode(cp) + " with no preceding letter at codepoint " +
                       std::to_string(i)};
    }
    CharToken tok;
    tok.base = cp;
    tok.kind = is_arabic_letter(cp) ? CharKind::ArabicLetter : CharKind::Other;
    tok.gold = DiacriticClass::None;
    ++i;
    if (tok.kind == CharKind::ArabicLetter) {
      std::vector<char32_t> marks;
      while (i < cps.size() && is_diacritic_mark(cps[i])) marks.push_back(cps[i++]);
      auto cls = class_of_marks(marks);
      if (!cls.ok()) return cls.error();
      tok.gold = cls.value();
    }
    out.chars.push_back(tok);
  }

  int n = static_cast<int>(out.chars.size());
  int w = 0;
  while (w < n) {
    while (w < n && is_whitespace(out.chars[static_cast<size_t>(w)].base)) ++w;
    if (w >= n) break;
    int b = w;
    while (w < n && !is_whitespace(out.chars[static_cast<size_t>(w)].base)) ++w;
    out.words.emplace_back(b, w);
  }
  return out;
}

Result<std::string> apply_diacritics(std::u32string_view base,
                                     const std::vector<DiacriticClass>& classes) {
  if (base.size() != classes.size()) {
    return Error{ErrorKind::LengthMismatch,
                 std::to_string(base.size()) + " codepoints vs " + std::to_string(classes.size()) +
                     " classes"};
  }
  std::string out;
  out.reserve(base.size() * 3);
  for (size_t i = 0; i < base.size(); ++i) {
    if (classes[i] != DiacriticClass::None && !is_arabic_letter(base[i])) {
      return Error{ErrorKind::ClassOnNonLetter,
                   std::string(class_name(classes[i])) + " on non-letter at position " +
                       std::to_string(i)};
    }
    utf8::encode_one(base[i], out);
    for (char32_t m : class_marks(classes[i])) utf8::encode_one(m, out);
  }
  return out;
}

Result<std::string> reconstruct(const AnnotatedSentence& s,
                                const std::vector<DiacriticClass>& classes) {
  return apply_diacritics(s.base_codepoints(), classes);
}

std::string classes_json() {
  std::ostringstream os;
  os << "{\n  \"classes\": [\n";
  const auto& table = class_table();
  for (size_t i = 0; i < table.size(); ++i) {
    os << "    {\"id\": " << i << ", \"name\": \"" << table[i].name << "\", \"marks\": [";
    for (size_t m = 0; m < table[i].marks.size(); ++m) {
      if (m) os << ", ";
      char buf[16];
      std::snprintf(buf, sizeof(buf), "\"U+%04X\"", static_cast<unsigned>(table[i].marks[m]));
      os << buf;
    }
    os << "]}" << (i + 1 < table.size() ? "," : "") << "\n";
  }
  os << "  ]\n}\n";
  return os.str();
}

uint64_t classes_hash() {
  return fnv1a(classes_json());
}

}  // namespace tashkeel::textkit
