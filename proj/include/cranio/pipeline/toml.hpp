#pragma once

// Reader for the small TOML subset used by pipeline configs:
//   [table] / [table.sub] headers, key = value, # comments,
//   values: numbers, "strings", true/false, single-line [arrays].

#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cranio::pipeline {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TomlValue {
  std::variant<double, std::string, bool, std::vector<TomlValue>> v;

  bool is_number() const { return std::holds_alternative<double>(v); }
  bool is_string() const { return std::holds_alternative<std::string>(v); }
  bool is_bool() const { return std::holds_alternative<bool>(v); }
  bool is_array() const { return std::holds_alternative<std::vector<TomlValue>>(v); }
};

using TomlTable = std::map<std::string, TomlValue>;
using TomlDocument = std::map<std::string, TomlTable>;  // "" holds top-level keys

namespace detail {

class TomlParser {
 public:
  TomlParser(std::string text, std::string origin) : s_(std::move(text)), origin_(std::move(origin)) {}

  TomlDocument parse() {
    TomlDocument doc;
    std::string table;
    doc[table];
    while (pos_ < s_.size()) {
      skip_blank();
      if (pos_ >= s_.size()) break;
      const char c = s_[pos_];
      if (c == '\n') {
        ++pos_, ++line_;
        continue;
      }
      if (c == '#') {
        skip_comment();
        continue;
      }
      if (c == '[') {
        ++pos_;
        skip_blank();
        const std::string name = dotted_name();
        skip_blank();
        expect(']');
        end_of_line();
        if (doc.count(name) && name != table && !doc[name].empty()) fail("table [" + name + "] defined twice");
        table = name;
        doc[table];
        continue;
      }
      const std::string key = bare_key();
      skip_blank();
      expect('=');
      skip_blank();
      TomlValue val = value();
      end_of_line();
      auto& t = doc[table];
      if (t.count(key)) fail("duplicate key '" + key + "'");
      t.emplace(key, std::move(val));
    }
    return doc;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(origin_ + ":" + std::to_string(line_) + ": " + msg);
  }
  void skip_blank() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\r')) ++pos_;
  }
  void skip_comment() {
    while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
  }
  void expect(char c) {
    if (pos_ >= s_.size() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  void end_of_line() {
    skip_blank();
    if (pos_ < s_.size() && s_[pos_] == '#') skip_comment();
    if (pos_ < s_.size()) {
      if (s_[pos_] != '\n') fail("unexpected text after value");
      ++pos_, ++line_;
    }
  }
  static bool key_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'; }
  std::string bare_key() {
    const auto start = pos_;
    while (pos_ < s_.size() && key_char(s_[pos_])) ++pos_;
    if (pos_ == start) fail("expected a key");
    return s_.substr(start, pos_ - start);
  }
  std::string dotted_name() {
    std::string name = bare_key();
    while (pos_ < s_.size() && s_[pos_] == '.') {
      ++pos_;
      name += "." + bare_key();
    }
    return name;
  }
  TomlValue value() {
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return {string()};
    if (c == '\'') return {literal()};
    if (c == '[') {
      ++pos_;
      std::vector<TomlValue> arr;
      for (;;) {
        skip_blank();
        if (pos_ < s_.size() && s_[pos_] == ']') {
          ++pos_;
          break;
        }
        arr.push_back(value());
        skip_blank();
        if (pos_ < s_.size() && s_[pos_] == ',') {
          ++pos_;
          continue;
        }
        expect(']');
        break;
      }
      return {std::move(arr)};
    }
    if (s_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return {true};
    }
    if (s_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return {false};
    }
    const auto start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' ||
                                s_[pos_] == '-' || s_[pos_] == '+' || s_[pos_] == '_'))
      ++pos_;
    std::string tok = s_.substr(start, pos_ - start);
    std::erase(tok, '_');
    if (!tok.empty() && tok[0] == '+') tok.erase(0, 1);
    double d = 0;
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
    if (tok.empty() || ec != std::errc() || p != tok.data() + tok.size()) fail("invalid value '" + tok + "'");
    return {d};
  }
  std::string string() {
    expect('"');
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c == '\n') fail("unterminated string");
      if (c == '\\') {
        if (pos_ >= s_.size()) fail("unterminated string");
        const char e = s_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      }
      out += c;
    }
    expect('"');
    return out;
  }

  // 'literal': no escapes
  std::string literal() {
    expect('\'');
    const auto start = pos_;
    while (pos_ < s_.size() && s_[pos_] != '\'' && s_[pos_] != '\n') ++pos_;
    if (pos_ >= s_.size() || s_[pos_] != '\'') fail("unterminated string");
    return s_.substr(start, pos_++ - start);
  }

  std::string s_;
  std::string origin_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

}  // namespace detail

inline TomlDocument parse_toml(const std::string& text, const std::string& origin = "<string>") {
  return detail::TomlParser(text, origin).parse();
}

inline TomlDocument load_toml(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str(), path.string());
}

}  // namespace cranio::pipeline
