#include "tashkeel/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace tashkeel::eval {

using textkit::AnnotatedSentence;
using textkit::CharKind;
using textkit::DiacriticClass;

double round2(double pct) {
  return std::floor(pct * 100.0 + 0.5) / 100.0;
}

Result<int> case_ending_position(const AnnotatedSentence& s, int w) {
  if (w < 0 || w >= static_cast<int>(s.words.size())) {
    return Error{ErrorKind::AlignmentError, "word index out of range"};
  }
  auto [b, e] = s.words[static_cast<size_t>(w)];
  for (int i = e - 1; i >= b; --i) {
    if (s.chars[static_cast<size_t>(i)].kind == CharKind::ArabicLetter) return i;
  }
  return Error{ErrorKind::NoArabicLetters, "word has no Arabic letters"};
}

Result<bool> check_alignment(const std::vector<AnnotatedSentence>& pred,
                             const std::vector<AnnotatedSentence>& gold) {
  if (pred.size() != gold.size()) {
    return Error{ErrorKind::AlignmentError,
                 "sentence counts differ: " + std::to_string(pred.size()) + " vs " +
                     std::to_string(gold.size())};
  }
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].chars.size() != gold[i].chars.size() || pred[i].words != gold[i].words) {
      return Error{ErrorKind::AlignmentError, "layout mismatch at line " + std::to_string(i)};
    }
    for (size_t c = 0; c < pred[i].chars.size(); ++c) {
      if (pred[i].chars[c].base != gold[i].chars[c].base) {
        return Error{ErrorKind::AlignmentError, "base text mismatch at line " + std::to_string(i)};
      }
    }
  }
  return true;
}

namespace {

struct Tally {
  int64_t scored_chars = 0, char_errors = 0, scored_words = 0, word_errors = 0;
};

/// The single definition of what gets scored; every metric derives
/// from it.
Tally tally(const std::vector<AnnotatedSentence>& pred, const std::vector<AnnotatedSentence>& gold,
            const MetricOptions& opts) {
  Tally t;
  for (size_t s = 0; s < gold.size(); ++s) {
    const auto& g = gold[s];
    const auto& p = pred[s];
    for (size_t w = 0; w < g.words.size(); ++w) {
      auto ce = case_ending_position(g, static_cast<int>(w));
      if (!ce.ok()) continue;  // no Arabic letters: token carries no diacritics
      int ce_pos = ce.value();
      auto [b, e] = g.words[w];
      bool word_scored = false, word_wrong = false;
      for (int i = b; i < e; ++i) {
        const auto& gc = g.chars[static_cast<size_t>(i)];
        if (gc.kind != CharKind::ArabicLetter) continue;
        if (!opts.include_case_ending && i == ce_pos) continue;
        if (!opts.include_no_diacritic && gc.gold == DiacriticClass::None) continue;
        ++t.scored_chars;
        word_scored = true;
        if (p.chars[static_cast<size_t>(i)].gold != gc.gold) {
          ++t.char_errors;
          word_wrong = true;
        }
      }
      if (word_scored) {
        ++t.scored_words;
        if (word_wrong) ++t.word_errors;
      }
    }
  }
  return t;
}

}  // namespace

Result<double> der(const std::vector<AnnotatedSentence>& pred,
                   const std::vector<AnnotatedSentence>& gold, const MetricOptions& opts) {
  auto aligned = check_alignment(pred, gold);
  if (!aligned.ok()) return aligned.error();
  Tally t = tally(pred, gold, opts);
  return t.scored_chars ? 100.0 * double(t.char_errors) / double(t.scored_chars) : 0.0;
}

Result<double> wer(const std::vector<AnnotatedSentence>& pred,
                   const std::vector<AnnotatedSentence>& gold, const MetricOptions& opts) {
  auto aligned = check_alignment(pred, gold);
  if (!aligned.ok()) return aligned.error();
  Tally t = tally(pred, gold, opts);
  return t.scored_words ? 100.0 * double(t.word_errors) / double(t.scored_words) : 0.0;
}

Result<EvalReport> error_reports(const std::vector<AnnotatedSentence>& pred,
                                 const std::vector<AnnotatedSentence>& gold) {
  auto aligned = check_alignment(pred, gold);
  if (!aligned.ok()) return aligned.error();

  EvalReport rep;
  const MetricOptions variants[4] = {{true, true}, {true, false}, {false, true}, {false, false}};
  for (int v = 0; v < 4; ++v) {
    Tally t = tally(pred, gold, variants[v]);
    rep.cells[size_t(v)] = {variants[v], t.scored_chars, t.char_errors, t.scored_words,
                            t.word_errors};
  }

  std::map<std::string, WordErrors> words;
  for (size_t s = 0; s < gold.size(); ++s) {
    const auto& g = gold[s];
    const auto& p = pred[s];
    for (size_t w = 0; w < g.words.size(); ++w) {
      auto ce = case_ending_position(g, static_cast<int>(w));
      if (!ce.ok()) continue;
      int ce_pos = ce.value();
      auto [b, e] = g.words[w];
      int64_t ce_err = 0, core_err = 0;
      for (int i = b; i < e; ++i) {
        const auto& gc = g.chars[static_cast<size_t>(i)];
        if (gc.kind != CharKind::ArabicLetter) continue;
        int gi = static_cast<int>(gc.gold);
        int pi = static_cast<int>(p.chars[static_cast<size_t>(i)].gold);
        if (i == ce_pos) {
          rep.ce_confusion[size_t(gi)][size_t(pi)] += 1;
          if (gi != pi) ++ce_err;
        } else {
          rep.core_confusion[size_t(gi)][size_t(pi)] += 1;
          if (gi != pi) ++core_err;
        }
      }
      if (ce_err + core_err > 0) {
        auto& entry = words[g.word_text(static_cast<int>(w))];
        entry.word = g.word_text(static_cast<int>(w));
        entry.ce_errors += ce_err;
        entry.core_errors += core_err;
      }
    }
  }
  for (auto& [k, v] : words) rep.word_errors.push_back(v);
  std::sort(rep.word_errors.begin(), rep.word_errors.end(), [](const auto& a, const auto& b) {
    int64_t ta = a.ce_errors + a.core_errors, tb = b.ce_errors + b.core_errors;
    if (ta != tb) return ta > tb;
    return a.word < b.word;
  });
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  const char* names[4] = {"incl_none_with_ce", "incl_none_no_ce", "excl_none_with_ce",
                          "excl_none_no_ce"};
  for (int v = 0; v < 4; ++v) {
    const auto& c = cells[size_t(v)];
    j["metrics"][names[v]] = {{"der", round2(c.der())},
                              {"wer", round2(c.wer())},
                              {"der_raw", c.der()},
                              {"wer_raw", c.wer()},
                              {"scored_chars", c.scored_chars},
                              {"char_errors", c.char_errors},
                              {"scored_words", c.scored_words},
                              {"word_errors", c.word_errors}};
  }
  auto conf = [](const Confusion& c) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : c) rows.push_back(row);
    return rows;
  };
  j["ce_confusion"] = conf(ce_confusion);
  j["core_confusion"] = conf(core_confusion);
  nlohmann::json tops = nlohmann::json::array();
  for (size_t i = 0; i < word_errors.size() && i < 50; ++i) {
    tops.push_back({{"word", word_errors[i].word},
                    {"ce_errors", word_errors[i].ce_errors},
                    {"core_errors", word_errors[i].core_errors}});
  }
  j["top_error_words"] = tops;
  return j.dump(2);
}

std::string EvalReport::format_table() const {
  char buf[256];
  std::ostringstream os;
  os << "DER/WER | Including 'no diacritic'          | Excluding 'no diacritic'\n";
  os << "        | w/ case ending  | w/o case ending | w/ case ending  | w/o case ending\n";
  std::snprintf(buf, sizeof(buf),
                "        | %6.2f%% / %6.2f%% | %6.2f%% / %6.2f%% | %6.2f%% / %6.2f%% | %6.2f%% / "
                "%6.2f%%\n",
                round2(cells[0].der()), round2(cells[0].wer()), round2(cells[1].der()),
                round2(cells[1].wer()), round2(cells[2].der()), round2(cells[2].wer()),
                round2(cells[3].der()), round2(cells[3].wer()));
  os << buf;
  return os.str();
}

std::string EvalReport::confusion_csv(const Confusion& c) {
  std::ostringstream os;
  os << "gold\\pred";
  for (int i = 0; i < textkit::kNumClasses; ++i) {
    os << "," << textkit::class_name(static_cast<DiacriticClass>(i));
  }
  os << "\n";
  for (int g = 0; g < textkit::kNumClasses; ++g) {
    os << textkit::class_name(static_cast<DiacriticClass>(g));
    for (int p = 0; p < textkit::kNumClasses; ++p) os << "," << c[size_t(g)][size_t(p)];
    os << "\n";
  }
  return os.str();
}

}  // namespace tashkeel::eval
