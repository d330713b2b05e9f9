#pragma once

// Line-oriented parsing helpers for the map, scenario, log and trace formats.
// All numbers go through std::from_chars, so parsing never depends on locale.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace coopdrive {

/// Parse failure carrying the 1-based line number it was raised on.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

/// Drops a trailing '#' comment.
inline std::string_view strip_comment(std::string_view s) {
  const auto hash = s.find('#');
  return hash == std::string_view::npos ? s : s.substr(0, hash);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool try_parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto* end = tok.data() + tok.size();
  const auto res = std::from_chars(tok.data(), end, out);
  return res.ec == std::errc{} && res.ptr == end;
}

inline bool try_parse_int(std::string_view tok, long long& out) {
  const auto* end = tok.data() + tok.size();
  const auto res = std::from_chars(tok.data(), end, out);
  return res.ec == std::errc{} && res.ptr == end;
}

/// Shortest decimal text that parses back to exactly the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Fixed-precision formatting for human-facing reports.
inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (const unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Per-line cursor used by the section-based parsers.
class TokenCursor {
 public:
  TokenCursor(std::string source, std::size_t line, std::vector<std::string_view> toks)
      : source_(std::move(source)), line_(line), toks_(std::move(toks)) {}

  bool done() const { return pos_ >= toks_.size(); }
  std::size_t remaining() const { return toks_.size() - pos_; }

  std::string_view word(std::string_view what) {
    if (done()) fail("missing " + std::string(what));
    return toks_[pos_++];
  }

  double number(std::string_view what) {
    const auto tok = word(what);
    double v = 0.0;
    if (!try_parse_double(tok, v)) fail("bad number for " + std::string(what) + ": '" + std::string(tok) + "'");
    return v;
  }

  long long integer(std::string_view what) {
    const auto tok = word(what);
    long long v = 0;
    if (!try_parse_int(tok, v)) fail("bad integer for " + std::string(what) + ": '" + std::string(tok) + "'");
    return v;
  }

  void expect_end() {
    if (!done()) fail("unexpected trailing token '" + std::string(toks_[pos_]) + "'");
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, line_, what); }

 private:
  std::string source_;
  std::size_t line_;
  std::vector<std::string_view> toks_;
  std::size_t pos_{0};
};

}  // namespace coopdrive
