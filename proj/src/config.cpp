#include "catreid/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "catreid/error.hpp"

namespace catreid::config {
namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-')) {
      return false;
    }
  }
  return true;
}

}  // namespace

KeyValueFile KeyValueFile::parse(std::istream& in, const std::filesystem::path& source) {
  KeyValueFile file;
  file.source = source;
  const std::string where = source.empty() ? std::string("<config>") : source.string();
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::config, where + ":" + std::to_string(line) + ": expected 'key = value'");
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (!valid_key(key)) {
      throw Error(ErrorKind::config, where + ":" + std::to_string(line) + ": invalid key '" + key + "'");
    }
    if (!file.entries.emplace(key, Entry{value, line}).second) {
      throw Error(ErrorKind::config, where + ":" + std::to_string(line) + ": duplicate key '" + key + "'");
    }
  }
  return file;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot read config " + path.string());
  return parse(in, path);
}

double parse_double(const std::string& key, const std::string& text) {
  double value = 0.0;
  const std::string t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
    throw Error(ErrorKind::config, key + ": expected a number, got '" + text + "'");
  }
  return value;
}

long long parse_int(const std::string& key, const std::string& text) {
  long long value = 0;
  const std::string t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
    throw Error(ErrorKind::config, key + ": expected an integer, got '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw Error(ErrorKind::config, key + ": expected true/false, got '" + text + "'");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, item));
  return out;
}

std::pair<int, int> parse_size(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  const auto x = t.find('x');
  if (x == std::string::npos) {
    throw Error(ErrorKind::config, key + ": expected WIDTHxHEIGHT, got '" + text + "'");
  }
  return {static_cast<int>(parse_int(key, t.substr(0, x))),
          static_cast<int>(parse_int(key, t.substr(x + 1)))};
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

}  // namespace catreid::config
