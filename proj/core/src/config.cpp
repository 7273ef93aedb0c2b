#include "tashkeel/config.hpp"

#include <fstream>
#include <sstream>

namespace tashkeel::config {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_text(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    size_t hash_at = line.find('#');
    if (hash_at != std::string::npos) line = line.substr(0, hash_at);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

Result<KeyValues> parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return Error{ErrorKind::IoError, "cannot open config " + path};
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

KeyValues merge(KeyValues base, const KeyValues& overrides) {
  for (const auto& [k, v] : overrides) base[k] = v;
  return base;
}

std::string to_text(const KeyValues& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
  return os.str();
}

uint64_t hash(const KeyValues& kv) {
  std::string bytes = to_text(kv);
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

int get_int(const KeyValues& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stoi(it->second);
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stod(it->second);
}

bool get_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  return it->second == "1" || it->second == "true" || it->second == "yes" || it->second == "on";
}

std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

uint64_t get_u64(const KeyValues& kv, const std::string& key, uint64_t fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stoull(it->second);
}

}  // namespace tashkeel::config
