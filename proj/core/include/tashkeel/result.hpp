#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace tashkeel {

enum class ErrorKind {
  InvalidMarkCombination,
  OrphanMark,
  LengthMismatch,
  ClassOnNonLetter,
  IoError,
  EmptyCorpus,
  WordTooLong,
  ShapeMismatch,
  ConfigMismatch,
  InvalidProbability,
  NonFiniteLoss,
  HintsOnD2Model,
  ParseError,
  AlignmentError,
  EmptyTable,
  NoArabicLetters,
};

const char* error_kind_name(ErrorKind kind);

struct Error {
  ErrorKind kind;
  std::string message;

  std::string to_string() const {
    return std::string(error_kind_name(kind)) + ": " + message;
  }
};

/// Value-or-error return for operations whose failures are ordinary data
/// (malformed text, bad files). Contract violations inside the numeric
/// stack throw instead; see ShapeError below.
template <typename T>
class Result {
 public:
  Result(T value) : state_(std::move(value)) {}
  Result(Error error) : state_(std::move(error)) {}

  bool ok() const { return std::holds_alternative<T>(state_); }
  explicit operator bool() const { return ok(); }

  const T& value() const& {
    if (!ok()) throw std::runtime_error("Result::value on error: " + error().to_string());
    return std::get<T>(state_);
  }
  T&& value() && {
    if (!ok()) throw std::runtime_error("Result::value on error: " + error().to_string());
    return std::get<T>(std::move(state_));
  }
  const Error& error() const {
    return std::get<Error>(state_);
  }

 private:
  std::variant<T, Error> state_;
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error("ShapeMismatch: " + what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error("ConfigMismatch: " + what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error("IoError: " + what) {}
};

}  // namespace tashkeel
