#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tashkeel/result.hpp"
#include "tashkeel/textkit.hpp"

namespace tashkeel::eval {

/// The four scoring variants: with/without case endings crossed with
/// including/excluding letters whose gold class is "no diacritic".
struct MetricOptions {
  bool include_no_diacritic = true;
  bool include_case_ending = true;
};

struct MetricCell {
  MetricOptions opts;
  int64_t scored_chars = 0;
  int64_t char_errors = 0;
  int64_t scored_words = 0;
  int64_t word_errors = 0;
  double der() const { return scored_chars ? 100.0 * double(char_errors) / double(scored_chars) : 0.0; }
  double wer() const { return scored_words ? 100.0 * double(word_errors) / double(scored_words) : 0.0; }
};

using Confusion = std::array<std::array<int64_t, textkit::kNumClasses>, textkit::kNumClasses>;

struct WordErrors {
  std::string word;  // undiacritized form
  int64_t ce_errors = 0;
  int64_t core_errors = 0;
};

struct EvalReport {
  std::array<MetricCell, 4> cells;  // iN+CE, iN, eN+CE, eN — Table-style order
  Confusion ce_confusion{};         // gold x predicted over case-ending letters
  Confusion core_confusion{};       // over the remaining letters
  std::vector<WordErrors> word_errors;  // every word with >=1 error, by total desc

  std::string to_json() const;
  std::string format_table() const;
  static std::string confusion_csv(const Confusion& c);
};

/// Index of the last Arabic letter of word `w` (the case-ending
/// position); trailing punctuation inside the token is skipped.
Result<int> case_ending_position(const textkit::AnnotatedSentence& s, int w);

/// Checks two parsed corpora line up: same sentence count, and per
/// sentence the same base codepoints and word layout.
Result<bool> check_alignment(const std::vector<textkit::AnnotatedSentence>& pred,
                             const std::vector<textkit::AnnotatedSentence>& gold);

Result<double> der(const std::vector<textkit::AnnotatedSentence>& pred,
                   const std::vector<textkit::AnnotatedSentence>& gold, const MetricOptions& opts);

Result<double> wer(const std::vector<textkit::AnnotatedSentence>& pred,
                   const std::vector<textkit::AnnotatedSentence>& gold, const MetricOptions& opts);

Result<EvalReport> error_reports(const std::vector<textkit::AnnotatedSentence>& pred,
                                 const std::vector<textkit::AnnotatedSentence>& gold);

/// Half-up rounding to two decimals, the report formatting rule.
double round2(double pct);

}  // namespace tashkeel::eval
