// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Self-contained parser/writer for the TOML subset the run configs use:
// [section] headers, bare keys, strings, integers, floats, booleans and
// (nested) arrays, with # comments. Keys are exposed flattened as
// "section.key".

#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "moecalo/errors.hpp"

namespace moecalo::toml {

class Value;
using Array = std::vector<Value>;

class Value {
 public:
  using Storage = std::variant<std::string, std::int64_t, double, bool, Array>;

  Value() : v_(std::int64_t{0}) {}
  Value(std::string s) : v_(std::move(s)) {}
  Value(const char* s) : v_(std::string(s)) {}
  Value(std::int64_t i) : v_(i) {}
  Value(int i) : v_(static_cast<std::int64_t>(i)) {}
  Value(double d) : v_(d) {}
  Value(bool b) : v_(b) {}
  Value(Array a) : v_(std::move(a)) {}

  bool is_string() const { return std::holds_alternative<std::string>(v_); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(v_); }
  bool is_float() const { return std::holds_alternative<double>(v_); }
  bool is_bool() const { return std::holds_alternative<bool>(v_); }
  bool is_array() const { return std::holds_alternative<Array>(v_); }
  bool is_number() const { return is_int() || is_float(); }

  const std::string& as_string() const { return std::get<std::string>(v_); }
  std::int64_t as_int() const { return std::get<std::int64_t>(v_); }
  bool as_bool() const { return std::get<bool>(v_); }
  const Array& as_array() const { return std::get<Array>(v_); }

  double as_double() const {
    if (is_int()) return static_cast<double>(as_int());
    return std::get<double>(v_);
  }

 private:
  Storage v_;
};

/// Flattened document: keys are "key" or "section.key".
struct Document {
  std::map<std::string, Value> kv;

  bool has(const std::string& key) const { return kv.count(key) > 0; }

  const Value& at(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end())
      throw ValidationError("config: missing required field '" + key + "'");
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    if (!it->second.is_string())
      throw ValidationError("config: field '" + key + "' must be a string");
    return it->second.as_string();
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    if (!it->second.is_number())
      throw ValidationError("config: field '" + key + "' must be a number");
    return it->second.as_double();
  }

  std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    if (!it->second.is_int())
      throw ValidationError("config: field '" + key + "' must be an integer");
    return it->second.as_int();
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    if (!it->second.is_bool())
      throw ValidationError("config: field '" + key + "' must be a boolean");
    return it->second.as_bool();
  }

  std::vector<double> get_double_array(const std::string& key,
                                       std::vector<double> dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    if (!it->second.is_array())
      throw ValidationError("config: field '" + key + "' must be an array");
    std::vector<double> out;
    for (const auto& v : it->second.as_array()) {
      if (!v.is_number())
        throw ValidationError("config: field '" + key + "' must contain numbers");
      out.push_back(v.as_double());
    }
    return out;
  }
};

namespace detail {

struct Cursor {
  std::string_view text;
  std::size_t pos = 0;
  int line = 1;

  bool eof() const { return pos >= text.size(); }
  char peek() const { return text[pos]; }
  char take() {
    const char c = text[pos++];
    if (c == '\n') ++line;
    return c;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ValidationError("toml parse error at line " + std::to_string(line) +
                          ": " + msg);
  }

  void skip_ws_inline() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) take();
  }

  /// Skips whitespace, newlines and comments.
  void skip_ws_all() {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        take();
      } else if (c == '#') {
        while (!eof() && peek() != '\n') take();
      } else {
        break;
      }
    }
  }
};

inline bool is_bare_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

inline std::string parse_bare_key(Cursor& c) {
  std::string out;
  while (!c.eof() && is_bare_key_char(c.peek())) out += c.take();
  if (out.empty()) c.fail("expected a key");
  return out;
}

inline std::string parse_basic_string(Cursor& c) {
  if (c.take() != '"') c.fail("expected '\"'");
  std::string out;
  while (true) {
    if (c.eof()) c.fail("unterminated string");
    const char ch = c.take();
    if (ch == '"') break;
    if (ch == '\\') {
      if (c.eof()) c.fail("unterminated escape");
      const char esc = c.take();
      switch (esc) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default: c.fail(std::string("unsupported escape \\") + esc);
      }
    } else {
      out += ch;
    }
  }
  return out;
}

Value parse_value(Cursor& c);

inline Value parse_array(Cursor& c) {
  if (c.take() != '[') c.fail("expected '['");
  Array arr;
  c.skip_ws_all();
  if (!c.eof() && c.peek() == ']') {
    c.take();
    return Value(std::move(arr));
  }
  while (true) {
    c.skip_ws_all();
    arr.push_back(parse_value(c));
    c.skip_ws_all();
    if (c.eof()) c.fail("unterminated array");
    const char ch = c.take();
    if (ch == ']') break;
    if (ch != ',') c.fail("expected ',' or ']' in array");
    c.skip_ws_all();
    if (!c.eof() && c.peek() == ']') {  // tolerate trailing comma
      c.take();
      break;
    }
  }
  return Value(std::move(arr));
}

inline Value parse_number(Cursor& c) {
  std::string tok;
  while (!c.eof()) {
    const char ch = c.peek();
    if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '+' || ch == '-' ||
        ch == '.' || ch == 'e' || ch == 'E' || ch == '_') {
      tok += c.take();
    } else {
      break;
    }
  }
  std::erase(tok, '_');
  if (tok.empty()) c.fail("expected a number");
  const bool is_float = tok.find_first_of(".eE") != std::string::npos;
  if (!is_float) {
    std::int64_t iv = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
    if (ec == std::errc() && p == tok.data() + tok.size()) return Value(iv);
  }
  double dv = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), dv);
  if (ec != std::errc() || p != tok.data() + tok.size())
    c.fail("malformed number '" + tok + "'");
  return Value(dv);
}

inline Value parse_value(Cursor& c) {
  if (c.eof()) c.fail("expected a value");
  const char ch = c.peek();
  if (ch == '"') return Value(parse_basic_string(c));
  if (ch == '[') return parse_array(c);
  if (ch == 't' || ch == 'f') {
    std::string tok;
    while (!c.eof() && std::isalpha(static_cast<unsigned char>(c.peek())))
      tok += c.take();
    if (tok == "true") return Value(true);
    if (tok == "false") return Value(false);
    c.fail("unknown literal '" + tok + "'");
  }
  return parse_number(c);
}

}  // namespace detail

inline Document parse(std::string_view text) {
  detail::Cursor c{text};
  Document doc;
  std::string section;
  while (true) {
    c.skip_ws_all();
    if (c.eof()) break;
    if (c.peek() == '[') {
      c.take();
      std::string name = detail::parse_bare_key(c);
      while (!c.eof() && c.peek() == '.') {
        c.take();
        name += '.';
        name += detail::parse_bare_key(c);
      }
      c.skip_ws_inline();
      if (c.eof() || c.take() != ']') c.fail("expected ']' after section name");
      section = name;
      continue;
    }
    const std::string key = detail::parse_bare_key(c);
    c.skip_ws_inline();
    if (c.eof() || c.take() != '=') c.fail("expected '=' after key '" + key + "'");
    c.skip_ws_inline();
    Value v = detail::parse_value(c);
    const std::string full = section.empty() ? key : section + "." + key;
    if (doc.kv.count(full)) c.fail("duplicate key '" + full + "'");
    doc.kv.emplace(full, std::move(v));
  }
  return doc;
}

namespace detail {

inline void write_value(std::string& out, const Value& v) {
  if (v.is_string()) {
    out += '"';
    for (char ch : v.as_string()) {
      switch (ch) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        default: out += ch;
      }
    }
    out += '"';
  } else if (v.is_int()) {
    out += std::to_string(v.as_int());
  } else if (v.is_float()) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v.as_double());
    out.append(buf, p);
    // ensure the token re-parses as a float
    std::string_view tok(buf, static_cast<std::size_t>(p - buf));
    if (tok.find_first_of(".eE") == std::string_view::npos) out += ".0";
  } else if (v.is_bool()) {
    out += v.as_bool() ? "true" : "false";
  } else {
    out += '[';
    const auto& arr = v.as_array();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (i) out += ", ";
      write_value(out, arr[i]);
    }
    out += ']';
  }
}

}  // namespace detail

/// Serializes a document; top-level keys first, then sections in sorted
/// order. Round-trips through parse().
inline std::string write(const Document& doc) {
  std::string out;
  // top-level keys
  for (const auto& [k, v] : doc.kv) {
    if (k.find('.') != std::string::npos) continue;
    out += k;
    out += " = ";
    detail::write_value(out, v);
    out += '\n';
  }
  std::string current;
  for (const auto& [k, v] : doc.kv) {
    const auto dot = k.rfind('.');
    if (dot == std::string::npos) continue;
    const std::string section = k.substr(0, dot);
    if (section != current) {
      out += "\n[";
      out += section;
      out += "]\n";
      current = section;
    }
    out += k.substr(dot + 1);
    out += " = ";
    detail::write_value(out, v);
    out += '\n';
  }
  return out;
}

}  // namespace moecalo::toml
