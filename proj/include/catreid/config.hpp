#pragma once

// Plain-text key/value configuration files:
//
//   # comment
//   epochs = 30
//   augment.blur_sigma = 0, 2     # trailing comments are allowed
//
// Keys are dotted names; every key may appear at most once.

#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

namespace catreid::config {

struct Entry {
  std::string value;
  int line = 0;
};

struct KeyValueFile {
  std::map<std::string, Entry> entries;
  /// Where the text came from; relative paths in values resolve against its directory.
  std::filesystem::path source;

  /// Throws Error(config) naming the line for malformed or duplicate keys.
  static KeyValueFile parse(std::istream& in, const std::filesystem::path& source = {});
  /// Throws Error(io) when the file cannot be read.
  static KeyValueFile load(const std::filesystem::path& path);
};

// Value parsers; each throws Error(config) mentioning `key` on bad input.
double parse_double(const std::string& key, const std::string& text);
long long parse_int(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);
std::vector<double> parse_double_list(const std::string& key, const std::string& text);
/// "WxH".
std::pair<int, int> parse_size(const std::string& key, const std::string& text);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace catreid::config
