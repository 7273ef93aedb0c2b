#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tashkeel/result.hpp"

namespace tashkeel::config {

using KeyValues = std::map<std::string, std::string>;

/// Flat `key=value` file; '#' starts a comment, blank lines ignored.
Result<KeyValues> parse_file(const std::string& path);
KeyValues parse_text(const std::string& text);

/// Applies `overrides` on top of `base`.
KeyValues merge(KeyValues base, const KeyValues& overrides);

std::string to_text(const KeyValues& kv);
uint64_t hash(const KeyValues& kv);

int get_int(const KeyValues& kv, const std::string& key, int fallback);
double get_double(const KeyValues& kv, const std::string& key, double fallback);
bool get_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback);
uint64_t get_u64(const KeyValues& kv, const std::string& key, uint64_t fallback);

}  // namespace tashkeel::config
